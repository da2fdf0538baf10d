"""Key-value extraction as a constrained linear assignment problem.

Rows are template value positions, columns are form entities followed by one
private "unfilled" column per row. A row must take exactly one column and a
column serves at most one row; the cheapest such matching is the extraction.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterable, Sequence

import numpy as np

from formkie.errors import FormKieError, SchemaError
from formkie.geometry import BBox, Point, euclidean, top_left
from formkie.ocr import Entity

BIG = 1e9


class Infeasible(FormKieError):
    """No assignment avoids forbidden cells; an upstream invariant broke."""


class SizeLimit(FormKieError):
    pass


@dataclass(frozen=True)
class TemplateEntry:
    key: str
    key_point: Point
    value_bbox: BBox


@dataclass(frozen=True)
class KieTemplate:
    class_label: str
    entries: tuple[TemplateEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("template needs at least one entry")
        for e in self.entries:
            if not e.key.strip():
                raise ValueError("template keys must be non-empty")

    @property
    def keys(self) -> list[tuple[str, Point]]:
        return [(e.key, e.key_point) for e in self.entries]

    def to_json(self) -> dict[str, Any]:
        return {
            "class_label": self.class_label,
            "entries": [
                {
                    "key": e.key,
                    "key_point": [e.key_point.x, e.key_point.y],
                    "value_bbox": [round(v) for v in e.value_bbox.as_list()],
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, data: Any) -> "KieTemplate":
        try:
            label = data["class_label"]
            entries = []
            for rec in data["entries"]:
                kx, ky = (float(v) for v in rec["key_point"])
                x0, y0, x1, y1 = (float(v) for v in rec["value_bbox"])
                if not isinstance(rec["key"], str):
                    raise TypeError("key must be a string")
                entries.append(TemplateEntry(rec["key"], Point(kx, ky), BBox(x0, y0, x1, y1)))
            if not isinstance(label, str):
                raise TypeError("class_label must be a string")
            return cls(label, tuple(entries))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad KIE template: {exc}") from exc


def load_template(raw: bytes | str) -> KieTemplate:
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return KieTemplate.from_json(data)


@dataclass(frozen=True)
class ConstraintSet:
    forbidden: frozenset[tuple[int, int]] = frozenset()
    forced: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "forbidden", frozenset(self.forbidden))
        object.__setattr__(self, "forced", frozenset(self.forced))
        if self.forbidden & self.forced:
            raise ValueError("a pair cannot be both forbidden and forced")
        rows = [i for i, _ in self.forced]
        cols = [j for _, j in self.forced]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("forced pairs must form a partial matching")


@dataclass(frozen=True)
class CostMatrix:
    """``values`` is n x (m + d): m entity columns, then d dummy columns
    (d is n when rejection is enabled, else 0)."""

    values: np.ndarray
    m: int
    reject_cost: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def has_dummies(self) -> bool:
        return self.values.shape[1] > self.m

    @property
    def col_labels(self) -> list[int | None]:
        """Entity index per column, None for dummies."""
        return list(range(self.m)) + [None] * (self.values.shape[1] - self.m)


def build_cost_matrix(
    template: KieTemplate,
    entities: Sequence[Entity],
    constraints: ConstraintSet | None = None,
    reject_cost: float = 150.0,
) -> CostMatrix:
    """Euclidean distance between each value box's top-left corner and each
    entity's top-left corner, with forbidden cells set to BIG and one
    dedicated dummy column per row priced at ``reject_cost``."""
    constraints = constraints or ConstraintSet()
    n, m = len(template.entries), len(entities)
    vals = np.full((n, m + n), BIG)
    for i, entry in enumerate(template.entries):
        t = top_left(entry.value_bbox)
        for j, ent in enumerate(entities):
            vals[i, j] = euclidean(t, ent.anchor)
        vals[i, m + i] = reject_cost
    for i, j in constraints.forbidden:
        vals[i, j] = BIG
    for i, j in constraints.forced:
        keep = vals[i, j]
        vals[i, :] = BIG
        vals[:, j] = BIG
        vals[i, j] = keep
    return CostMatrix(vals, m, reject_cost)


@dataclass(frozen=True)
class AssignmentSolution:
    pairs: tuple[tuple[int, int], ...]
    nulls: tuple[int, ...]
    objective: float

    def column_of(self, i: int) -> int | None:
        for r, j in self.pairs:
            if r == i:
                return j
        return None


def _to_solution(c: CostMatrix, cols: Sequence[int]) -> AssignmentSolution:
    pairs, nulls = [], []
    for i, j in enumerate(cols):
        if c.values[i, j] >= BIG:
            raise Infeasible(f"row {i} can only be served by a forbidden column")
        if j >= c.m:
            nulls.append(i)
        else:
            pairs.append((i, int(j)))
    objective = math.fsum(c.values[i, j] for i, j in enumerate(cols))
    return AssignmentSolution(tuple(pairs), tuple(nulls), objective)


def solve_assignment(c: CostMatrix) -> AssignmentSolution:
    """Exact minimum-cost assignment of every row to a distinct column.

    Shortest augmenting paths with row/column potentials (the rectangular
    Hungarian method), O(n^2 M) for n rows and M columns. The LP relaxation of
    this problem is integral, so the optimum is also optimal for the binary
    program.
    """
    a = c.values
    n, cols = a.shape
    if n == 0:
        return AssignmentSolution((), (), 0.0)
    if n > cols:
        raise Infeasible(f"{n} rows but only {cols} columns")

    u = np.zeros(n + 1)
    v = np.zeros(cols + 1)
    owner = np.zeros(cols + 1, dtype=int)  # owner[j] = 1-based row holding column j
    way = np.zeros(cols + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(cols + 1, np.inf)
        used = np.zeros(cols + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    assigned = [0] * n
    for j in range(1, cols + 1):
        if owner[j]:
            assigned[owner[j] - 1] = j - 1
    return _to_solution(c, assigned)


@lru_cache(maxsize=64)
def _injections(m: int, k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(m), k)), dtype=int).reshape(-1, k)


def brute_force_assignment(c: CostMatrix, max_rows: int = 8) -> AssignmentSolution:
    """Exhaustive search over every injective row-to-column map.

    With dummies, each row either takes an entity column or its own dummy, so
    the search runs over every subset of rows sent to entities and every
    injective map of that subset into the entity columns. Meant as a test
    oracle for small instances only.
    """
    n = c.n
    if n > max_rows:
        raise SizeLimit(f"{n} rows exceeds the brute-force limit of {max_rows}")
    a = c.values
    if n == 0:
        return AssignmentSolution((), (), 0.0)
    best_cost = math.inf
    best_cols: list[int] | None = None

    if c.has_dummies:
        subsets: Iterable[tuple[int, ...]] = (
            s for k in range(n + 1) for s in itertools.combinations(range(n), k)
        )
        real_cols = c.m
    else:
        subsets = [tuple(range(n))]
        real_cols = a.shape[1]

    for rows in subsets:
        k = len(rows)
        if k > real_cols:
            continue
        rest = [i for i in range(n) if i not in rows]
        base = math.fsum(a[i, c.m + i] for i in rest)
        if k == 0:
            totals = np.array([base])
            perms = np.zeros((1, 0), dtype=int)
        else:
            perms = _injections(real_cols, k)
            totals = a[list(rows)][np.arange(k), perms].sum(axis=1) + base
        idx = int(np.argmin(totals))
        if totals[idx] < best_cost:
            best_cost = totals[idx]
            cols = [c.m + i for i in range(n)]
            for r, j in zip(rows, perms[idx]):
                cols[r] = int(j)
            best_cols = cols
    assert best_cols is not None
    return _to_solution(c, best_cols)


def build_constraints(
    template: KieTemplate,
    entities: Sequence[Entity],
    anchor_entities: Iterable[int] = (),
    hard_radius: float = 400.0,
    forced: Iterable[tuple[int, int]] = (),
) -> ConstraintSet:
    """Forbid anchor entities (printed key text) for every row, and any pair
    whose distance exceeds ``hard_radius``."""
    forced = frozenset(forced)
    forbidden = set()
    anchored = set(anchor_entities)
    for i, entry in enumerate(template.entries):
        t = top_left(entry.value_bbox)
        for j, ent in enumerate(entities):
            if j in anchored or euclidean(t, ent.anchor) > hard_radius:
                forbidden.add((i, j))
    return ConstraintSet(frozenset(forbidden - forced), forced)


@dataclass(frozen=True)
class KeyValue:
    key: str
    value: str | None
    bbox: BBox | None
    cost: float | None

    def to_json(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "value": self.value,
            "bbox": [round(v) for v in self.bbox.as_list()] if self.bbox is not None else None,
            "cost": self.cost,
        }


def extract_key_values(
    template: KieTemplate,
    entities: Sequence[Entity],
    sol: AssignmentSolution,
    costs: CostMatrix | None = None,
) -> list[KeyValue]:
    chosen = dict(sol.pairs)
    out = []
    for i, entry in enumerate(template.entries):
        j = chosen.get(i)
        if j is None:
            out.append(KeyValue(entry.key, None, None, None))
            continue
        ent = entities[j]
        cost = float(costs.values[i, j]) if costs is not None else euclidean(top_left(entry.value_bbox), ent.anchor)
        out.append(KeyValue(entry.key, ent.text, ent.bbox, cost))
    return out
