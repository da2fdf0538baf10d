"""OCR ingestion and consolidation of fragmented strings into entities."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from formkie.errors import FormKieError, SchemaError
from formkie.geometry import BBox, Point, merge, top_left


class GeometryError(FormKieError):
    pass


class EmptyDocument(UserWarning):
    """A document parsed fine but holds no tokens."""


@dataclass(frozen=True)
class Token:
    text: str
    bbox: BBox
    confidence: float = 1.0


@dataclass(frozen=True)
class OcrDocument:
    page_width: float
    page_height: float
    tokens: tuple[Token, ...]
    source_id: str = ""
    # optional precomputed text embedding for classification
    vector: tuple[float, ...] | None = None

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "source_id": self.source_id,
            "page": {"width": self.page_width, "height": self.page_height},
            "tokens": [
                {"text": t.text, "bbox": t.bbox.as_list(), "confidence": t.confidence}
                for t in self.tokens
            ],
        }
        if self.vector is not None:
            out["vector"] = list(self.vector)
        return out


@dataclass(frozen=True)
class Entity:
    text: str
    bbox: BBox
    member_count: int = 1
    confidence: float = 1.0

    @property
    def anchor(self) -> Point:
        return top_left(self.bbox)

    def with_bbox(self, bbox: BBox) -> "Entity":
        return Entity(self.text, bbox, self.member_count, self.confidence)

    def as_token(self) -> Token:
        return Token(self.text, self.bbox, self.confidence)


@dataclass(frozen=True)
class ConsolidationConfig:
    vertical_tol: float = 15.0
    intra_word_gap: float = 60.0

    def __post_init__(self):
        if self.vertical_tol <= 0 or self.intra_word_gap <= 0:
            raise ValueError("consolidation thresholds must be positive")


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, kind):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def _box(values, where: str) -> list[float]:
    if not isinstance(values, list) or len(values) != 4:
        raise SchemaError(f"{where}: box must be a list of 4 numbers")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}: box must be a list of 4 numbers")
    return [float(v) for v in values]


def document_from_json(data: Any) -> OcrDocument:
    if not isinstance(data, dict):
        raise SchemaError("document must be a JSON object")
    source_id = _require(data, "source_id", str, "document")
    page = _require(data, "page", dict, "document")
    width = _require(page, "width", (int, float), "page")
    height = _require(page, "height", (int, float), "page")
    if width <= 0 or height <= 0:
        raise SchemaError("page dimensions must be positive")
    raw_tokens = _require(data, "tokens", list, "document")

    tokens = []
    for k, raw in enumerate(raw_tokens):
        where = f"tokens[{k}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: must be an object")
        text = _require(raw, "text", str, where).strip()
        if not text:
            raise SchemaError(f"{where}: empty text")
        if ("bbox" in raw) == ("nbbox" in raw):
            raise SchemaError(f"{where}: exactly one of bbox/nbbox required")
        if "bbox" in raw:
            x0, y0, x1, y1 = _box(raw["bbox"], where)
        else:
            nx0, ny0, nx1, ny1 = _box(raw["nbbox"], where)
            x0, y0, x1, y1 = nx0 * width, ny0 * height, nx1 * width, ny1 * height
        if x0 > x1 or y0 > y1:
            raise GeometryError(f"{where}: inverted box {[x0, y0, x1, y1]}")
        if x1 < 0 or y1 < 0 or x0 > width or y0 > height:
            raise GeometryError(f"{where}: box lies outside the page")
        conf = raw.get("confidence", 1.0)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1:
            raise SchemaError(f"{where}: confidence must be a number in [0, 1]")
        tokens.append(Token(text, BBox(x0, y0, x1, y1), float(conf)))

    vector = data.get("vector")
    if vector is not None:
        if not isinstance(vector, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector
        ):
            raise SchemaError("document: vector must be a list of numbers")
        vector = tuple(float(v) for v in vector)

    if not tokens:
        warnings.warn(f"document {source_id!r} has no tokens", EmptyDocument, stacklevel=2)
    return OcrDocument(float(width), float(height), tuple(tokens), source_id, vector)


def parse_ocr_json(raw: bytes | str) -> OcrDocument:
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return document_from_json(data)


def sort_reading_order(tokens: Sequence[Token], vertical_tol: float = 15.0) -> list[Token]:
    """Top-left to bottom-right order.

    Tokens are swept by y_min; a new row starts whenever a token sits more
    than ``vertical_tol`` below the first token of the current row. Rows are
    then read left to right.
    """
    by_y = sorted(range(len(tokens)), key=lambda k: tokens[k].bbox.y_min)
    row_of = {}
    row = -1
    row_top = None
    for k in by_y:
        y = tokens[k].bbox.y_min
        if row_top is None or y - row_top > vertical_tol:
            row += 1
            row_top = y
        row_of[k] = row
    order = sorted(by_y, key=lambda k: (row_of[k], tokens[k].bbox.x_min, tokens[k].bbox.y_min))
    return [tokens[k] for k in order]


@dataclass
class _Run:
    text: str
    bbox: BBox
    last: BBox
    count: int
    confidence: float


def _merge_pass(items: list[tuple[Token, int]], cfg: ConsolidationConfig) -> list[tuple[Token, int]]:
    """One greedy left-to-right sweep. ``items`` is in reading order and
    pairs each token with the number of raw tokens it already stands for."""
    n = len(items)
    if n == 0:
        return []
    boxes = np.array([t.bbox.as_list() for t, _ in items])
    x0, y0, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 3]
    free = np.ones(n, dtype=bool)
    out = []
    for s in range(n):
        if not free[s]:
            continue
        free[s] = False
        tok, cnt = items[s]
        run = _Run(tok.text, tok.bbox, tok.bbox, cnt, tok.confidence)
        while True:
            cand = (
                free
                & (x0 >= run.bbox.x_min)
                & (np.abs(y0 - run.last.y_min) <= cfg.vertical_tol)
                & (np.abs(y1 - run.last.y_max) <= cfg.vertical_tol)
                & (x0 - run.bbox.x_max <= cfg.intra_word_gap)
            )
            hits = np.flatnonzero(cand)
            if len(hits) == 0:
                break
            # nearest leading edge first; reading order breaks ties
            j = int(hits[np.argmin(x0[hits])])
            free[j] = False
            nxt, ncnt = items[j]
            gap = nxt.bbox.x_min - run.bbox.x_max
            step = nxt.bbox.x_min - run.last.x_min
            sep = "" if gap < 0 or step < cfg.intra_word_gap else " "
            run = _Run(
                run.text + sep + nxt.text,
                merge(run.bbox, nxt.bbox),
                nxt.bbox,
                run.count + ncnt,
                min(run.confidence, nxt.confidence),
            )
        out.append((Token(run.text, run.bbox, run.confidence), run.count))
    return out


def consolidate(doc: OcrDocument | Sequence[Token], cfg: ConsolidationConfig | None = None) -> list[Entity]:
    """Join OCR fragments that belong to one entity.

    A candidate joins the current run when its top and bottom are both within
    ``vertical_tol`` of the piece appended last (so slanted lines can drift)
    and the gap from the run's trailing edge to the candidate's leading edge
    is at most ``intra_word_gap``. Pieces whose
    starts are closer than ``intra_word_gap`` (or that overlap) are glued
    without a space, otherwise a single space separates them.

    Sweeps repeat until nothing merges, so the result is a fixed point and
    consolidating it again is a no-op.
    """
    cfg = cfg or ConsolidationConfig()
    tokens = doc.tokens if isinstance(doc, OcrDocument) else tuple(doc)
    items = [(t, 1) for t in sort_reading_order(tokens, cfg.vertical_tol)]
    while True:
        merged = _merge_pass(items, cfg)
        done = len(merged) == len(items)
        order = sort_reading_order([t for t, _ in merged], cfg.vertical_tol)
        counts = {id(t): c for t, c in merged}
        items = [(t, counts[id(t)]) for t in order]
        if done:
            break
    return [Entity(t.text, t.bbox, c, t.confidence) for t, c in items]
