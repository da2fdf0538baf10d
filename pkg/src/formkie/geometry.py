"""Points, boxes, distances and projective transforms in page pixel space.

Origin is the top-left corner of the page, x grows rightward and y grows
downward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from formkie.errors import FormKieError

DET_EPS = 1e-12
W_EPS = 1e-9


class DegenerateProjection(FormKieError):
    """A point was projected onto the line at infinity."""


class DegenerateConfiguration(FormKieError):
    """Correspondences do not determine a unique homography."""


class InsufficientPairs(FormKieError):
    pass


class NoConsensus(FormKieError):
    """RANSAC could not find at least four mutually consistent pairs."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self.as_list()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def corners(self) -> list[Point]:
        return [
            Point(self.x_min, self.y_min),
            Point(self.x_max, self.y_min),
            Point(self.x_max, self.y_max),
            Point(self.x_min, self.y_max),
        ]

    def contains(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def hull(cls, points: Iterable[Point]) -> "BBox":
        pts = list(points)
        xs = [p.x for p in pts]
        ys = [p.y for p in pts]
        return cls(min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform stored as a read-only array."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateConfiguration("singular homography")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(_normalize(np.linalg.inv(self.m)))

    def flat(self) -> list[float]:
        return [float(v) for v in self.m.ravel()]


def top_left(b: BBox) -> Point:
    return Point(b.x_min, b.y_min)


def merge(a: BBox, b: BBox) -> BBox:
    return BBox(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
    )


def manhattan(a: Point, b: Point) -> float:
    return abs(a.x - b.x) + abs(a.y - b.y)


def euclidean(a: Point, b: Point) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def apply_homography(h: Homography, p: Point) -> Point:
    m = h.m
    w = m[2, 0] * p.x + m[2, 1] * p.y + m[2, 2]
    if abs(w) <= W_EPS:
        raise DegenerateProjection(f"w={w:g} at ({p.x}, {p.y})")
    return Point(
        float((m[0, 0] * p.x + m[0, 1] * p.y + m[0, 2]) / w),
        float((m[1, 0] * p.x + m[1, 1] * p.y + m[1, 2]) / w),
    )


def project(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Project an (N, 2) array through one (3, 3) or many (K, 3, 3) matrices.

    Returns (N, 2) or (K, N, 2). Points landing at infinity come back as inf.
    """
    homog = np.hstack([pts, np.ones((len(pts), 1))])
    out = homog @ np.swapaxes(m, -1, -2)
    w = out[..., 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        res = out[..., :2] / w
    res[np.broadcast_to(np.abs(w) <= W_EPS, res.shape)] = np.inf
    return res


def map_bbox(h: Homography, b: BBox) -> BBox:
    """Axis-aligned hull of the four mapped corners."""
    return BBox.hull(apply_homography(h, c) for c in b.corners())


def _normalize(m: np.ndarray) -> np.ndarray:
    if abs(m[2, 2]) > DET_EPS:
        return m / m[2, 2]
    return m / np.linalg.norm(m)


def hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to the origin and scales the mean
    distance from it to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    if d < DET_EPS:
        raise DegenerateConfiguration("coincident points")
    s = math.sqrt(2) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _collinear(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] < DET_EPS or sv[1] / sv[0] < 1e-9


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # src, dst: (..., N, 2) -> (..., 2N, 9)
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    rows = np.stack([r1, r2], axis=-2)
    return rows.reshape(*rows.shape[:-3], -1, 9)


def _as_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([[p.x, p.y] for p, _ in pairs], dtype=float).reshape(-1, 2)
    dst = np.array([[q.x, q.y] for _, q in pairs], dtype=float).reshape(-1, 2)
    return src, dst


def _fit_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    if len(src) < 4:
        raise InsufficientPairs(f"need at least 4 pairs, got {len(src)}")
    if _collinear(src) or _collinear(dst):
        raise DegenerateConfiguration("points are collinear or coincident")
    ts = hartley_transform(src)
    td = hartley_transform(dst)
    ns = src @ ts[:2, :2].T + ts[:2, 2]
    nd = dst @ td[:2, :2].T + td[:2, 2]
    a = _dlt_rows(ns, nd)
    _, sv, vt = np.linalg.svd(a)
    # a null space of dimension > 1 means the fit is not unique
    if len(sv) >= 8 and sv[7] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("correspondences do not fix a unique homography")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) <= DET_EPS:
        raise DegenerateConfiguration("homography maps the origin to infinity")
    m = m / m[2, 2]
    if abs(np.linalg.det(m)) <= DET_EPS:
        raise DegenerateConfiguration("singular homography")
    return m


def estimate_homography(pairs: Sequence[tuple[Point, Point]]) -> Homography:
    """Least-squares homography (normalized DLT) mapping each src onto its dst."""
    src, dst = _as_arrays(pairs)
    return Homography(_fit_dlt(src, dst))


def _batch_minimal(src: np.ndarray, dst: np.ndarray, idx: np.ndarray):
    """Exact 4-point homographies for every row of ``idx`` at once.

    Returns (K, 3, 3) matrices and a (K,) validity mask.
    """
    s = src[idx]  # (K, 4, 2)
    d = dst[idx]
    cs = s.mean(axis=1, keepdims=True)
    cd = d.mean(axis=1, keepdims=True)
    ds = np.linalg.norm(s - cs, axis=2).mean(axis=1)
    dd = np.linalg.norm(d - cd, axis=2).mean(axis=1)
    valid = (ds > DET_EPS) & (dd > DET_EPS)
    ds = np.where(valid, ds, 1.0)
    dd = np.where(valid, dd, 1.0)
    ks = math.sqrt(2) / ds
    kd = math.sqrt(2) / dd
    ns = (s - cs) * ks[:, None, None]
    nd = (d - cd) * kd[:, None, None]
    a = _dlt_rows(ns, nd)  # (K, 8, 9)
    _, sv, vt = np.linalg.svd(a)
    valid &= sv[:, 7] > 1e-8 * sv[:, 0]
    hn = vt[:, -1].reshape(-1, 3, 3)

    k = len(idx)
    ts = np.zeros((k, 3, 3))
    ts[:, 0, 0] = ks
    ts[:, 1, 1] = ks
    ts[:, 0, 2] = -ks * cs[:, 0, 0]
    ts[:, 1, 2] = -ks * cs[:, 0, 1]
    ts[:, 2, 2] = 1
    td_inv = np.zeros((k, 3, 3))
    td_inv[:, 0, 0] = 1 / kd
    td_inv[:, 1, 1] = 1 / kd
    td_inv[:, 0, 2] = cd[:, 0, 0]
    td_inv[:, 1, 2] = cd[:, 0, 1]
    td_inv[:, 2, 2] = 1
    m = td_inv @ hn @ ts
    scale = m[:, 2, 2]
    valid &= np.abs(scale) > DET_EPS
    m = m / np.where(valid, scale, 1.0)[:, None, None]
    valid &= np.abs(np.linalg.det(m)) > DET_EPS
    return m, valid


RANSAC_CHUNK = 100
# largest allowed ratio between the projective scale w at two corners of the
# working region; bigger ratios mean a horizon line close to the page
MAX_PERSPECTIVE = 1.5


def perspective_spread(models: np.ndarray, region: BBox) -> np.ndarray:
    """max(w) / min(w) over the region's corners per model; inf if w changes sign."""
    models = np.asarray(models, dtype=float)
    pts = np.array([[c.x, c.y] for c in region.corners()])
    w = models[..., 2, :2] @ pts.T + models[..., 2, 2:3]
    lo, hi = w.min(axis=-1), w.max(axis=-1)
    # sign of a homography is arbitrary; flip so the larger magnitude is positive
    flip = hi < -lo
    lo, hi = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    return np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)


def _needed_iterations(inlier_ratio: float, confidence: float) -> int:
    p_good = inlier_ratio ** 4
    if p_good >= 1:
        return 0
    if p_good <= 0:
        return 1 << 30
    return int(math.ceil(math.log(1 - confidence) / math.log(1 - p_good)))


def ransac_homography(
    pairs: Sequence[tuple[Point, Point]],
    inlier_tol: float = 5.0,
    iterations: int = 2000,
    seed: int = 0,
    confidence: float = 0.999,
    region: BBox | None = None,
    max_perspective: float = MAX_PERSPECTIVE,
) -> tuple[Homography, np.ndarray]:
    """Robust homography fit.

    Minimal 4-pair samples are drawn with a seeded generator; the hypothesis
    with the most inliers (reprojection error <= inlier_tol) wins, earliest
    sample on ties. Sampling stops once ``confidence`` says an all-inlier
    sample has been seen, or after ``iterations`` samples. The winner is refit
    on all its inliers by least squares. Returns the homography and a boolean
    inlier mask.

    Hypotheses whose perspective term varies by more than ``max_perspective``
    across ``region`` (default: the hull of the source points) are discarded;
    anchors on two lines otherwise admit fits that blow up between them.
    """
    src, dst = _as_arrays(pairs)
    n = len(src)
    if n < 4:
        raise InsufficientPairs(f"need at least 4 pairs, got {n}")
    if region is None:
        region = BBox(*src.min(axis=0), *src.max(axis=0))

    rng = np.random.default_rng(seed)
    best_count, best_mask, best_model = -1, None, None
    drawn = 0
    budget = iterations
    while drawn < budget:
        k = min(RANSAC_CHUNK, budget - drawn)
        # four distinct indices per row
        idx = np.argsort(rng.random((k, n)), axis=1)[:, :4]
        drawn += k
        models, valid = _batch_minimal(src, dst, idx)
        valid &= perspective_spread(models, region) <= max_perspective
        if not valid.any():
            continue
        models = models[valid]
        err = np.linalg.norm(project(models, src) - dst[None], axis=2)
        inliers = err <= inlier_tol
        counts = inliers.sum(axis=1)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count, best_mask, best_model = int(counts[top]), inliers[top], models[top]
            budget = min(iterations, max(drawn, _needed_iterations(best_count / n, confidence)))
    if best_count < 4:
        raise NoConsensus(f"best consensus has {max(best_count, 0)} pairs")

    mask = best_mask
    # refit can enlarge or shrink the set; iterate a few times to a fixed point
    m = best_model
    for _ in range(5):
        try:
            refit = _fit_dlt(src[mask], dst[mask])
        except DegenerateConfiguration:
            break
        if perspective_spread(refit, region) > max_perspective:
            break
        m = refit
        new_mask = np.linalg.norm(project(m, src) - dst, axis=1) <= inlier_tol
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return Homography(m), mask.copy()


def fit_similarity(pairs: Sequence[tuple[Point, Point]]) -> Homography:
    """Least-squares scale + rotation + translation from two or more pairs."""
    src, dst = _as_arrays(pairs)
    if len(src) < 2:
        raise InsufficientPairs(f"need at least 2 pairs, got {len(src)}")
    # unknowns a, b, tx, ty with x' = a x - b y + tx, y' = b x + a y + ty
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, -y, 1, 0])
        rhs.append(u)
        rows.append([y, x, 0, 1])
        rhs.append(v)
    sol, _, rank, _ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    if rank < 4:
        raise DegenerateConfiguration("similarity fit needs two distinct points")
    a, b, tx, ty = sol
    return Homography(np.array([[a, -b, tx], [b, a, ty], [0, 0, 1.0]]))
