import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from formkie.geometry import (
    BBox,
    DegenerateConfiguration,
    DegenerateProjection,
    Homography,
    InsufficientPairs,
    NoConsensus,
    Point,
    apply_homography,
    estimate_homography,
    euclidean,
    fit_similarity,
    manhattan,
    map_bbox,
    merge,
    perspective_spread,
    ransac_homography,
    top_left,
)

coord = st.floats(-5000, 5000, allow_nan=False)
points = st.builds(Point, coord, coord)


@st.composite
def boxes(draw):
    x0, x1 = sorted((draw(coord), draw(coord)))
    y0, y1 = sorted((draw(coord), draw(coord)))
    return BBox(x0, y0, x1, y1)


def near_identity(rng, max_deg=5.0, persp=2e-5):
    t = math.radians(rng.uniform(-max_deg, max_deg))
    s = rng.uniform(0.9, 1.1)
    m = np.array([
        [s * math.cos(t), -s * math.sin(t), rng.uniform(-40, 40)],
        [s * math.sin(t), s * math.cos(t), rng.uniform(-40, 40)],
        [rng.uniform(-persp, persp), rng.uniform(-persp, persp), 1.0],
    ])
    return Homography(m)


# --- boxes and points -----------------------------------------------------------

@pytest.mark.parametrize("box, want", [
    ((10, 20, 50, 40), (10, 20)),
    ((0, 0, 0, 0), (0, 0)),
    ((5, 7, 9, 7), (5, 7)),
])
def test_top_left(box, want):
    assert top_left(BBox(*box)) == Point(*want)


def test_inverted_box_rejected():
    with pytest.raises(ValueError):
        BBox(10, 0, 5, 5)


@pytest.mark.parametrize("a, b, want", [
    ((0, 0, 10, 10), (5, 5, 20, 8), (0, 0, 20, 10)),
    ((0, 0, 10, 10), (0, 0, 10, 10), (0, 0, 10, 10)),
    ((0, 0, 1, 1), (100, 100, 101, 101), (0, 0, 101, 101)),
])
def test_merge_examples(a, b, want):
    assert merge(BBox(*a), BBox(*b)) == BBox(*want)


@given(boxes(), boxes(), boxes())
def test_merge_algebra(a, b, c):
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))
    assert merge(a, a) == a
    m = merge(a, b)
    assert m.contains(a) and m.contains(b)


@pytest.mark.parametrize("a, b, want", [((0, 0), (3, 4), 7), ((9, 9), (9, 9), 0), ((-2, 0), (2, 0), 4)])
def test_manhattan_examples(a, b, want):
    assert manhattan(Point(*a), Point(*b)) == want


def test_euclidean_examples():
    assert euclidean(Point(0, 0), Point(3, 4)) == 5
    assert euclidean(Point(7, 7), Point(7, 7)) == 0
    assert euclidean(Point(1, 1), Point(2, 2)) == pytest.approx(1.41421356, abs=1e-8)


@pytest.mark.parametrize("dist", [manhattan, euclidean])
@given(a=points, b=points, c=points)
def test_metric_axioms(dist, a, b, c):
    assert dist(a, b) >= 0
    assert dist(a, b) == dist(b, a)
    assert dist(a, a) == 0
    assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-9


# --- homographies ---------------------------------------------------------------

def test_apply_homography_examples():
    assert apply_homography(Homography.identity(), Point(17, 23)) == Point(17, 23)
    shift = Homography(np.array([[1, 0, 5], [0, 1, -3], [0, 0, 1.0]]))
    assert apply_homography(shift, Point(0, 0)) == Point(5, -3)
    # 90 degrees with y pointing down: x' = -y, y' = x
    rot = Homography(np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]]))
    p = apply_homography(rot, Point(1, 0))
    assert (p.x, p.y) == pytest.approx((0, 1))


def test_point_at_infinity():
    h = Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 1.0]]))
    with pytest.raises(DegenerateProjection):
        apply_homography(h, Point(-1, 5))


def test_singular_matrix_rejected():
    with pytest.raises(DegenerateConfiguration):
        Homography(np.zeros((3, 3)))


def test_estimate_fixed_corners_is_identity():
    corners = BBox(0, 0, 100, 100).corners()
    h = estimate_homography([(c, c) for c in corners])
    assert np.abs(h.m - np.eye(3)).max() < 1e-6


def test_estimate_translation_generalizes():
    corners = BBox(0, 0, 100, 100).corners()
    h = estimate_homography([(c, Point(c.x + 10, c.y + 20)) for c in corners])
    assert np.abs(h.m - np.array([[1, 0, 10], [0, 1, 20], [0, 0, 1]])).max() < 1e-6
    held_out = apply_homography(h, Point(37, 81))
    assert (held_out.x, held_out.y) == pytest.approx((47, 101), abs=1e-6)


def test_estimate_needs_four_pairs():
    with pytest.raises(InsufficientPairs):
        estimate_homography([(Point(0, 0), Point(0, 0))] * 3)


def test_estimate_rejects_collinear():
    pts = [Point(i, 2 * i) for i in range(5)]
    with pytest.raises(DegenerateConfiguration):
        estimate_homography([(p, p) for p in pts])


quad = st.lists(st.tuples(st.floats(0, 1000), st.floats(0, 1000)), min_size=4, max_size=4)


def _general_position(pts):
    a = np.array(pts)
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(a[i] - a[j]) < 50:
                return False
    for i, j, k in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]:
        u, v = a[j] - a[i], a[k] - a[i]
        if abs(u[0] * v[1] - u[1] * v[0]) < 5000:
            return False
    return True


@given(quad, quad, st.permutations(range(4)))
def test_four_point_fit_is_exact_and_order_free(src, dst, perm):
    if not (_general_position(src) and _general_position(dst)):
        return
    pairs = [(Point(*s), Point(*d)) for s, d in zip(src, dst)]
    try:
        h = estimate_homography(pairs)
    except DegenerateConfiguration:
        return  # dst configuration folds the plane; nothing to check
    shuffled = estimate_homography([pairs[k] for k in perm])
    for s, d in pairs:
        for m in (h, shuffled):
            p = apply_homography(m, s)
            assert math.hypot(p.x - d.x, p.y - d.y) < 1e-6


def test_inverse_round_trip():
    h = near_identity(np.random.default_rng(3))
    p = apply_homography(h.inverse(), apply_homography(h, Point(400, 900)))
    assert (p.x, p.y) == pytest.approx((400, 900), abs=1e-6)


def test_map_bbox_stays_valid():
    rot = Homography(np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]]))
    assert map_bbox(rot, BBox(0, 0, 10, 20)) == BBox(-20, 0, 0, 10)


def test_perspective_spread():
    page = BBox(0, 0, 1700, 2200)
    assert perspective_spread(np.eye(3), page) == pytest.approx(1.0)
    tilt = np.array([[1, 0, 0], [0, 1, 0], [0, 1e-3, 1.0]])  # w from 1 to 3.2
    assert perspective_spread(tilt, page) == pytest.approx(3.2)
    horizon = np.array([[1, 0, 0], [0, 1, 0], [0, -1e-3, 1.0]])  # w crosses 0 at y=1000
    assert perspective_spread(horizon, page) == math.inf


# --- RANSAC ---------------------------------------------------------------------

def _pairs_under(h, rng, n, spread=1500):
    src = [Point(*rng.uniform(0, spread, 2)) for _ in range(n)]
    return [(p, apply_homography(h, p)) for p in src]


def test_ransac_exact_pairs_all_inliers():
    rng = np.random.default_rng(11)
    h_true = near_identity(rng)
    pairs = _pairs_under(h_true, rng, 20)
    h, mask = ransac_homography(pairs)
    assert mask.all()
    for s, d in pairs:
        p = apply_homography(h, s)
        assert math.hypot(p.x - d.x, p.y - d.y) < 1e-6


def test_ransac_excludes_planted_outliers():
    rng = np.random.default_rng(12)
    h_true = near_identity(rng)
    pairs = _pairs_under(h_true, rng, 16)
    for _ in range(4):
        s = Point(*rng.uniform(0, 1500, 2))
        pairs.append((s, Point(s.x + rng.uniform(80, 300), s.y - rng.uniform(80, 300))))
    _, mask = ransac_homography(pairs, inlier_tol=3.0)
    assert mask[:16].all() and not mask[16:].any()


def test_ransac_is_reproducible():
    rng = np.random.default_rng(13)
    pairs = _pairs_under(near_identity(rng), rng, 12)
    pairs[0] = (pairs[0][0], Point(0, 0))
    a, ma = ransac_homography(pairs, seed=5)
    b, mb = ransac_homography(pairs, seed=5)
    assert np.array_equal(a.m, b.m) and np.array_equal(ma, mb)


def test_ransac_small_sets():
    with pytest.raises(InsufficientPairs):
        ransac_homography([(Point(0, 0), Point(0, 0))] * 3)
    # scattered destinations: no four pairs agree within tolerance
    rng = np.random.default_rng(1)
    junk = [(Point(*rng.uniform(0, 1000, 2)), Point(*rng.uniform(0, 1000, 2))) for _ in range(6)]
    try:
        _, mask = ransac_homography(junk, inlier_tol=0.5, iterations=50)
        assert mask.sum() >= 4
    except NoConsensus:
        pass


def test_fit_similarity_recovers_rotation():
    t = math.radians(3)
    m = np.array([[1.02 * math.cos(t), -1.02 * math.sin(t), 12], [1.02 * math.sin(t), 1.02 * math.cos(t), -7], [0, 0, 1]])
    h_true = Homography(m)
    pairs = [(p, apply_homography(h_true, p)) for p in (Point(100, 100), Point(900, 1800))]
    h = fit_similarity(pairs)
    assert np.abs(h.m - m).max() < 1e-9
    with pytest.raises(DegenerateConfiguration):
        fit_similarity([(Point(5, 5), Point(1, 1)), (Point(5, 5), Point(2, 2))])
