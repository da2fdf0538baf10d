"""Keyword anchors and document-to-template realignment on OCR coordinates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from formkie.geometry import (
    BBox,
    DegenerateConfiguration,
    DegenerateProjection,
    Homography,
    NoConsensus,
    Point,
    fit_similarity,
    manhattan,
    map_bbox,
    ransac_homography,
)
from formkie.ocr import Entity


@dataclass(frozen=True)
class FuzzyConfig:
    min_similarity: float = 0.9
    max_anchor_distance: float = 200.0

    def __post_init__(self):
        if not 0 < self.min_similarity <= 1:
            raise ValueError("min_similarity must lie in (0, 1]")
        if self.max_anchor_distance <= 0:
            raise ValueError("max_anchor_distance must be positive")


@dataclass(frozen=True)
class RansacParams:
    inlier_tol: float = 5.0
    iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.inlier_tol <= 0 or self.iterations < 1:
            raise ValueError("inlier_tol must be positive and iterations at least 1")


@dataclass(frozen=True)
class AnchorMatch:
    template_key_index: int
    entity_index: int
    similarity: float
    src: Point
    dst: Point


@dataclass(frozen=True)
class AlignmentReport:
    anchors_found: int
    inliers: int
    transform: tuple[float, ...]
    skipped: bool
    method: str

    def to_json(self) -> dict:
        return {
            "anchors_found": self.anchors_found,
            "inliers": self.inliers,
            "transform": list(self.transform),
            "skipped": self.skipped,
        }


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_similarity(a: str, b: str) -> float:
    """1 - edit distance / longer length, case-insensitive."""
    a, b = a.lower(), b.lower()
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def match_anchors(
    template_keys: Sequence[tuple[str, Point]],
    entities: Sequence[Entity],
    cfg: FuzzyConfig | None = None,
) -> list[AnchorMatch]:
    """Pair template keys with the form entities that print them.

    A pair qualifies when the texts are at least ``min_similarity`` alike and
    the top-left corners are within ``max_anchor_distance`` (Manhattan). Pairs
    are taken greedily by similarity, then distance, so that every key and
    every entity is used at most once.
    """
    cfg = cfg or FuzzyConfig()
    cands = []
    for i, (text, point) in enumerate(template_keys):
        klen = len(text)
        for j, ent in enumerate(entities):
            dist = manhattan(ent.anchor, point)
            if dist > cfg.max_anchor_distance:
                continue
            # length alone can rule out the threshold
            longest = max(klen, len(ent.text))
            if longest and abs(klen - len(ent.text)) / longest > 1 - cfg.min_similarity + 1e-12:
                continue
            sim = fuzzy_similarity(text, ent.text)
            if sim >= cfg.min_similarity:
                cands.append((-sim, dist, i, j))
    cands.sort()
    used_k, used_e = set(), set()
    out = []
    for neg_sim, _, i, j in cands:
        if i in used_k or j in used_e:
            continue
        used_k.add(i)
        used_e.add(j)
        out.append(AnchorMatch(i, j, -neg_sim, entities[j].anchor, template_keys[i][1]))
    out.sort(key=lambda m: m.template_key_index)
    return out


def transform_entities(entities: Sequence[Entity], h: Homography) -> list[Entity]:
    return [e.with_bbox(map_bbox(h, e.bbox)) for e in entities]


def align_document(
    entities: Sequence[Entity],
    anchors: Sequence[AnchorMatch],
    ransac: RansacParams | None = None,
    region: BBox | None = None,
) -> tuple[list[Entity], Homography, AlignmentReport]:
    """Map form entities into the template frame.

    Four or more anchors give a RANSAC homography, two or three a least
    squares similarity, fewer leave the document as is. A failed fit also
    falls back to the identity and marks the report as skipped. ``region``
    (normally the page) is where the homography must stay well conditioned.
    """
    ransac = ransac or RansacParams()
    pairs = [(a.src, a.dst) for a in anchors]
    ident = Homography.identity()

    def skipped(method):
        report = AlignmentReport(len(anchors), 0, tuple(ident.flat()), True, method)
        return list(entities), ident, report

    try:
        if len(pairs) >= 4:
            h, mask = ransac_homography(
                pairs, ransac.inlier_tol, ransac.iterations, ransac.seed, region=region
            )
            inliers, method = int(mask.sum()), "homography"
        elif len(pairs) >= 2:
            h = fit_similarity(pairs)
            inliers, method = len(pairs), "similarity"
        else:
            return skipped("none")
        moved = transform_entities(entities, h)
    except (NoConsensus, DegenerateConfiguration, DegenerateProjection):
        return skipped("failed")
    return moved, h, AlignmentReport(len(anchors), inliers, tuple(h.flat()), False, method)


def anchor_rms(entities: Sequence[Entity], anchors: Sequence[AnchorMatch]) -> float:
    if not anchors:
        return 0.0
    d = [
        (entities[a.entity_index].anchor.x - a.dst.x) ** 2 + (entities[a.entity_index].anchor.y - a.dst.y) ** 2
        for a in anchors
    ]
    return float(np.sqrt(np.mean(d)))
