"""Per-segment offset correction from matched keyword anchors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from formkie.alignment import AnchorMatch
from formkie.geometry import BBox, Point
from formkie.ocr import Entity


@dataclass(frozen=True)
class SegmentGrid:
    page_w: float
    page_h: float
    rows: int = 5
    cols: int = 4

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.page_w <= 0 or self.page_h <= 0:
            raise ValueError("page dimensions must be positive")

    @property
    def cell_w(self) -> float:
        return self.page_w / self.cols

    @property
    def cell_h(self) -> float:
        return self.page_h / self.rows

    @property
    def cells(self) -> list[BBox]:
        """Row-major cell rectangles."""
        return [
            BBox(c * self.cell_w, r * self.cell_h, (c + 1) * self.cell_w, (r + 1) * self.cell_h)
            for r in range(self.rows)
            for c in range(self.cols)
        ]

    def cell_of(self, p: Point) -> tuple[int, int]:
        # half-open cells; anything on or past the page edge clamps inward
        r = min(max(int(np.floor(p.y / self.cell_h)), 0), self.rows - 1)
        c = min(max(int(np.floor(p.x / self.cell_w)), 0), self.cols - 1)
        return r, c


def build_grid(page_w: float, page_h: float, rows: int = 5, cols: int = 4) -> SegmentGrid:
    return SegmentGrid(page_w, page_h, rows, cols)


@dataclass(frozen=True)
class SegmentCorrection:
    """Mean (template - form) offsets per cell, shape (rows, cols)."""

    dx: np.ndarray
    dy: np.ndarray
    support: np.ndarray

    def at(self, cell: tuple[int, int]) -> tuple[float, float]:
        return float(self.dx[cell]), float(self.dy[cell])

    def to_json(self) -> list[dict]:
        rows, cols = self.support.shape
        return [
            {
                "row": r,
                "col": c,
                "support": int(self.support[r, c]),
                "dx": float(self.dx[r, c]),
                "dy": float(self.dy[r, c]),
            }
            for r in range(rows)
            for c in range(cols)
        ]


def compute_corrections(grid: SegmentGrid, anchors: Sequence[AnchorMatch]) -> SegmentCorrection:
    shape = (grid.rows, grid.cols)
    sx = np.zeros(shape)
    sy = np.zeros(shape)
    support = np.zeros(shape, dtype=int)
    for a in anchors:
        cell = grid.cell_of(a.src)
        sx[cell] += a.dst.x - a.src.x
        sy[cell] += a.dst.y - a.src.y
        support[cell] += 1
    if not anchors:
        return SegmentCorrection(np.zeros(shape), np.zeros(shape), support)
    gx = sx.sum() / len(anchors)
    gy = sy.sum() / len(anchors)
    has = support > 0
    dx = np.where(has, sx / np.maximum(support, 1), gx)
    dy = np.where(has, sy / np.maximum(support, 1), gy)
    return SegmentCorrection(dx, dy, support)


def scale_entities(entities: Sequence[Entity], grid: SegmentGrid, corr: SegmentCorrection) -> list[Entity]:
    """Translate every entity by the correction of the cell holding its top-left corner."""
    out = []
    for e in entities:
        dx, dy = corr.at(grid.cell_of(e.anchor))
        out.append(e if dx == 0 and dy == 0 else e.with_bbox(e.bbox.translate(dx, dy)))
    return out
