import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from formkie.alignment import (
    AnchorMatch,
    FuzzyConfig,
    RansacParams,
    align_document,
    anchor_rms,
    fuzzy_similarity,
    levenshtein,
    match_anchors,
)
from formkie.geometry import BBox, Homography, Point, apply_homography, map_bbox
from formkie.ocr import Entity


def ent(text, x, y, w=80, h=20):
    return Entity(text, BBox(x, y, x + w, y + h))


def lev_reference(a, b):
    # plain recursive definition, memoized
    from functools import lru_cache

    @lru_cache(None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


@given(st.text("abcé ", max_size=8), st.text("abcé ", max_size=8))
def test_levenshtein_matches_definition(a, b):
    assert levenshtein(a, b) == lev_reference(a, b) == levenshtein(b, a)


def test_similarity_examples():
    assert fuzzy_similarity("Name", "Name") == 1.0
    assert fuzzy_similarity("Name", "Nane") == 0.75
    assert fuzzy_similarity("", "x") == 0.0
    assert fuzzy_similarity("", "") == 1.0
    assert fuzzy_similarity("NAME", "name") == 1.0
    assert fuzzy_similarity("Lost Nome", "Last Name") == pytest.approx(7 / 9)


def test_match_examples():
    keys = [("Last Name", Point(100, 300))]
    m = match_anchors(keys, [ent("Last Name", 104, 306)])
    assert len(m) == 1 and m[0].similarity == 1.0
    assert m[0].src == Point(104, 306) and m[0].dst == Point(100, 300)

    dates = [ent("Date", 100, 300), ent("Date", 100, 1800)]
    m = match_anchors([("Date", Point(100, 310))], dates)
    assert [a.entity_index for a in m] == [0]

    assert match_anchors(keys, [ent("Lost Nome", 100, 300)]) == []


def test_match_threshold_boundary():
    # one edit in ten characters is exactly 0.9
    keys = [("abcdefghij", Point(0, 0))]
    assert len(match_anchors(keys, [ent("abcdefghiX", 0, 0)])) == 1
    assert match_anchors(keys, [ent("abcdefghXX", 0, 0)]) == []


def test_match_prefers_similarity_then_distance():
    keys = [("Date", Point(100, 300)), ("Date", Point(100, 420))]
    ents = [ent("Date", 100, 330), ent("Dat", 100, 300), ent("Date", 100, 410)]
    m = match_anchors(keys, ents, FuzzyConfig(min_similarity=0.7))
    assert [(a.template_key_index, a.entity_index) for a in m] == [(0, 0), (1, 2)]


@given(st.lists(st.tuples(st.sampled_from(["Name", "Date", "Nam", "Dote", "City"]),
                          st.integers(0, 600), st.integers(0, 600)), max_size=12))
def test_match_is_one_to_one(spec):
    keys = [("Name", Point(100, 100)), ("Date", Point(300, 300)), ("City", Point(200, 500)), ("Date", Point(310, 320))]
    ents = [ent(t, x, y) for t, x, y in spec]
    m = match_anchors(keys, ents, FuzzyConfig(0.7, 250))
    assert len({a.entity_index for a in m}) == len(m)
    assert len({a.template_key_index for a in m}) == len(m)
    for a in m:
        assert a.similarity >= 0.7


def test_config_validation():
    with pytest.raises(ValueError):
        FuzzyConfig(min_similarity=0)
    with pytest.raises(ValueError):
        FuzzyConfig(max_anchor_distance=-1)
    with pytest.raises(ValueError):
        RansacParams(iterations=0)


# --- alignment ------------------------------------------------------------------

def _grid_keys(n=12):
    return [(f"key{k}", Point(150 + 500 * (k % 3), 200 + 400 * (k // 3))) for k in range(n)]


def _rotation_about_centre(deg, cx=850, cy=1100):
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return Homography(np.array([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy], [0, 0, 1]]))


def _scan(keys, h):
    ents = []
    for text, p in keys:
        q = apply_homography(h, p)
        ents.append(ent(text, q.x, q.y, w=0, h=0))
    return ents


def test_aligned_input_gives_identity():
    keys = _grid_keys()
    ents = [ent(t, p.x, p.y) for t, p in keys]
    anchors = match_anchors(keys, ents)
    moved, h, report = align_document(ents, anchors)
    assert np.abs(h.m - np.eye(3)).max() < 1e-3
    assert report.inliers == len(keys) and not report.skipped
    for a, b in zip(ents, moved):
        assert math.dist((a.anchor.x, a.anchor.y), (b.anchor.x, b.anchor.y)) <= 5.0


def test_rotation_is_undone():
    keys = _grid_keys()
    ents = _scan(keys, _rotation_about_centre(3))
    anchors = match_anchors(keys, ents)
    assert len(anchors) >= 8
    moved, _, report = align_document(ents, anchors)
    assert report.skipped is False
    assert anchor_rms(moved, anchors) < 2.0


def test_fallback_ladder():
    keys = _grid_keys(3)
    ents = _scan(keys, _rotation_about_centre(1))
    anchors = match_anchors(keys, ents)
    moved, _, report = align_document(ents, anchors)
    assert report.to_json()["skipped"] is False and report.method == "similarity"
    assert anchor_rms(moved, anchors) < 1e-6

    moved, h, report = align_document(ents, anchors[:1])
    assert report.skipped and h.flat() == Homography.identity().flat()
    assert moved == ents

    _, _, report = align_document([], [])
    assert report.to_json() == {"anchors_found": 0, "inliers": 0, "transform": [1, 0, 0, 0, 1, 0, 0, 0, 1], "skipped": True}


def test_no_consensus_is_skipped():
    rng = np.random.default_rng(4)
    anchors = [
        AnchorMatch(k, k, 1.0, Point(*rng.uniform(0, 1700, 2)), Point(*rng.uniform(0, 1700, 2)))
        for k in range(6)
    ]
    ents = [ent("x", a.src.x, a.src.y) for a in anchors]
    _, _, report = align_document(ents, anchors, RansacParams(inlier_tol=0.01, iterations=30))
    assert report.skipped or report.inliers >= 4


@given(st.floats(-5, 5), st.floats(0.9, 1.1), st.floats(-60, 60), st.floats(-60, 60))
def test_round_trip_recovers_positions(deg, s, tx, ty):
    t = math.radians(deg)
    h_true = Homography(np.array([
        [s * math.cos(t), -s * math.sin(t), tx],
        [s * math.sin(t), s * math.cos(t), ty],
        [0, 0, 1.0],
    ]))
    keys = _grid_keys()
    ents = _scan(keys, h_true)
    anchors = match_anchors(keys, ents, FuzzyConfig(max_anchor_distance=1000))
    moved, _, _ = align_document(ents, anchors)
    assert anchor_rms(moved, anchors) <= 5.0


def test_boxes_stay_valid_after_mapping():
    keys = _grid_keys()
    rot = _rotation_about_centre(4)
    ents = [Entity(t, map_bbox(rot, BBox(p.x, p.y, p.x + 90, p.y + 25))) for t, p in keys]
    moved, _, report = align_document(ents, match_anchors(keys, ents))
    assert not report.skipped
    for e in moved:
        assert e.bbox.x_min <= e.bbox.x_max and e.bbox.y_min <= e.bbox.y_max
        assert e.bbox.width >= 90 and e.bbox.height >= 25
