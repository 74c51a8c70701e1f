"""Pareto dominance, non-dominated sorting, crowding distance, NSGA-II
survivor selection, and 2-D hypervolume over (negated pass rate, cost).

Everything here is a pure function over small inputs; the archive sizes this
optimizer produces are tiny, so the O(n^2) algorithms are deliberate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

INF = math.inf


class ZeroBaseline(Exception):
    """Relative hypervolume gain is undefined for a zero baseline.

    `sentinel` is the value reporting layers should print instead.
    """

    sentinel = math.inf


@dataclass(frozen=True)
class ObjectiveVector:
    """Minimization objectives: neg_pass = -pass_rate, cost in USD."""

    neg_pass: float
    cost: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.neg_pass, self.cost)


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """True iff a is no worse than b in both objectives and strictly better
    in at least one (minimization)."""
    return (
        a.neg_pass <= b.neg_pass
        and a.cost <= b.cost
        and (a.neg_pass < b.neg_pass or a.cost < b.cost)
    )


@dataclass(frozen=True)
class FrontAssignment:
    """Per-point front index (0 = non-dominated) and crowding distance,
    plus the fronts themselves as index tuples in input order."""

    front_index: tuple[int, ...]
    crowding: tuple[float, ...]
    fronts: tuple[tuple[int, ...], ...]


def nondominated_sort(points: Sequence[ObjectiveVector]) -> FrontAssignment:
    """Fast non-dominated sorting with crowding distances per front.

    Front 0 is the set with no dominator; front i+1 is the non-dominated set
    of the remainder. Indices within a front keep input order.
    """
    n = len(points)
    dominated_by = [0] * n
    dominates_set: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and dominates(points[i], points[j]):
                dominates_set[i].append(j)
                dominated_by[j] += 1

    front_index = [0] * n
    fronts: list[tuple[int, ...]] = []
    current = [i for i in range(n) if dominated_by[i] == 0]
    level = 0
    while current:
        fronts.append(tuple(current))
        nxt = []
        for i in current:
            front_index[i] = level
            for j in dominates_set[i]:
                dominated_by[j] -= 1
                if dominated_by[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
        level += 1

    crowding = [0.0] * n
    for front in fronts:
        dists = crowding_distance([points[i] for i in front])
        for i, d in zip(front, dists):
            crowding[i] = d
    return FrontAssignment(tuple(front_index), tuple(crowding), tuple(fronts))


def crowding_distance(front: Sequence[ObjectiveVector]) -> list[float]:
    """Standard NSGA-II crowding distance for points on one front.

    Per objective the extremes of the stable value-sort get +inf; interior
    points accumulate (next - prev) / (max - min). A zero-range objective
    contributes nothing. Ties keep input order, so of several identical
    points only the first and last act as extremes.
    """
    m = len(front)
    if m == 0:
        return []
    if m == 1:
        return [INF]
    dist = [0.0] * m
    for value in (lambda p: p.neg_pass, lambda p: p.cost):
        order = sorted(range(m), key=lambda i: value(front[i]))
        dist[order[0]] = INF
        dist[order[-1]] = INF
        vmin, vmax = value(front[order[0]]), value(front[order[-1]])
        if vmax == vmin:
            continue
        for pos in range(1, m - 1):
            i = order[pos]
            if dist[i] != INF:
                dist[i] += (value(front[order[pos + 1]]) - value(front[order[pos - 1]])) / (
                    vmax - vmin
                )
    return dist


def nsga2_select(
    candidates: Sequence[tuple[ObjectiveVector, int]], k: int
) -> list[int]:
    """NSGA-II survivor selection: pick k of the given (objective,
    arrival_index) pairs.

    Fills by ascending front, splits the boundary front by descending
    crowding distance, and breaks remaining ties by ascending arrival index,
    which makes the selection fully deterministic. Returns positions into
    `candidates` in selection order; the result for k is always a prefix of
    the result for k+1.
    """
    if k > len(candidates):
        raise ValueError(f"cannot select {k} of {len(candidates)} candidates")
    points = [c[0] for c in candidates]
    arrivals = [c[1] for c in candidates]
    fa = nondominated_sort(points)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (fa.front_index[i], -fa.crowding[i], arrivals[i]),
    )
    return order[:k]


@dataclass(frozen=True)
class HypervolumeResult:
    value: float
    reference_point: tuple[float, float]
    cost_ceiling: float


def hypervolume_2d(
    front: Sequence[tuple[float, float]],
    *,
    cost_ceiling: float,
    tests_total: int | None = None,
) -> HypervolumeResult:
    """Exact 2-D hypervolume of (pass_metric, cost) points against the
    reference point (pass 0, normalized cost 1).

    pass_metric is divided by tests_total when given, otherwise treated as an
    already-normalized rate; cost is divided by cost_ceiling and clipped at 1.
    Dominated points are discarded, the rest sorted by pass descending, and
    the dominated area summed as rectangles (pass_i - pass_next) * (1 - cost_i).
    An empty front has hypervolume 0.
    """
    if cost_ceiling <= 0:
        raise ValueError("cost_ceiling must be positive")
    ref = (0.0, 1.0)
    pts = []
    for p, c in front:
        if tests_total is not None:
            p = p / tests_total
        p = min(max(p, 0.0), 1.0)
        nc = min(max(c / cost_ceiling, 0.0), 1.0)
        pts.append((p, nc))
    if not pts:
        return HypervolumeResult(0.0, ref, cost_ceiling)

    def dominated(i: int) -> bool:
        pi, ci = pts[i]
        for j, (pj, cj) in enumerate(pts):
            if j != i and pj >= pi and cj <= ci and (pj > pi or cj < ci):
                return True
        return False

    nd = sorted(
        (pts[i] for i in range(len(pts)) if not dominated(i)),
        key=lambda t: (-t[0], t[1]),
    )
    value = 0.0
    for i, (p, c) in enumerate(nd):
        next_p = nd[i + 1][0] if i + 1 < len(nd) else 0.0
        value += (p - next_p) * (1.0 - c)
    return HypervolumeResult(value, ref, cost_ceiling)


def delta_hv_percent(hv_base: float, hv_new: float) -> float:
    """Relative hypervolume change in percent. Both values must come from
    the same normalization (same cost ceiling) to be meaningful."""
    if hv_base < 0:
        raise ValueError("hv_base must be nonnegative")
    if hv_base == 0:
        raise ZeroBaseline("baseline hypervolume is zero; relative gain is infinite")
    return 100.0 * (hv_new - hv_base) / hv_base
