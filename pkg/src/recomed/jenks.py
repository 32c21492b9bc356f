"""Fisher-Jenks natural breaks: optimal 1-D classification.

Dynamic programming over contiguous partitions of the sorted values,
minimizing the total within-class sum of squared deviations from the
class means. The DP is exact; ties between equally good partitions are
broken by preferring smaller upper boundaries for lower classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class JenksClass:
    min_value: float
    max_value: float
    member_count: int


@dataclass(frozen=True)
class JenksClassification:
    k: int
    classes: tuple[JenksClass, ...]
    assignment: tuple[int, ...]

    def class_of(self, value_index: int) -> int:
        return self.assignment[value_index]

    def to_rows(self) -> list[dict]:
        """Tabular layout: one row (class, min, max, count) per class."""
        return [
            {
                "class": i,
                "min": c.min_value,
                "max": c.max_value,
                "count": c.member_count,
            }
            for i, c in enumerate(self.classes)
        ]


def _prefix_dp(vals: np.ndarray, k: int) -> np.ndarray:
    """cost[j][i] = minimal SSE of the first i values split into j classes."""
    n = len(vals)
    s1 = np.concatenate(([0.0], np.cumsum(vals)))
    s2 = np.concatenate(([0.0], np.cumsum(vals * vals)))
    cost = np.full((k + 1, n + 1), np.inf)
    cost[0, 0] = 0.0
    ends = np.arange(n + 1)
    for j in range(1, k + 1):
        for i in range(j, n + 1):
            ts = ends[j - 1 : i]
            width = i - ts
            seg = (s2[i] - s2[ts]) - (s1[i] - s1[ts]) ** 2 / width
            cand = cost[j - 1, ts] + seg
            cost[j, i] = cand.min()
    return cost


def _segment_cost(s1: np.ndarray, s2: np.ndarray, lo: int, hi: int) -> float:
    """SSE of sorted values lo..hi inclusive (0-based)."""
    width = hi - lo + 1
    return float((s2[hi + 1] - s2[lo]) - (s1[hi + 1] - s1[lo]) ** 2 / width)


def jenks_breaks(values, k: int) -> JenksClassification:
    """Classify ``values`` into ``k`` contiguous classes of sorted order.

    Requires 1 <= k <= number of distinct values. Deterministic: among
    equally optimal partitions the one with the smallest upper boundary
    for class 0 wins, then class 1, and so on.
    """
    values = list(values)
    if not values:
        raise ValueError("values must be non-empty")
    if any(v <= 0 for v in values):
        raise ValueError("values must be positive counts")
    distinct = len(set(values))
    if not 1 <= k <= distinct:
        raise ValueError(f"k must be in [1, {distinct}] for these values, got {k}")

    n = len(values)
    order = sorted(range(n), key=lambda i: (values[i], i))
    svals = [values[i] for i in order]
    vals = np.asarray(svals, dtype=np.float64)
    s1 = np.concatenate(([0.0], np.cumsum(vals)))
    s2 = np.concatenate(([0.0], np.cumsum(vals * vals)))

    # suffix_cost[j][i]: minimal SSE of sorted values i..n-1 in j classes
    rev_cost = _prefix_dp(vals[::-1].copy(), max(k - 1, 1))

    def suffix_cost(j: int, i: int) -> float:
        if j == 0:
            return 0.0 if i == n else np.inf
        return float(rev_cost[j, n - i])

    bounds: list[int] = []
    start = 0
    for classes_left in range(k, 1, -1):
        last_end = n - classes_left  # leave at least 1 value per later class
        costs = [
            _segment_cost(s1, s2, start, e) + suffix_cost(classes_left - 1, e + 1)
            for e in range(start, last_end + 1)
        ]
        best = min(costs)
        tol = 1e-9 * (1.0 + abs(best))
        best_e = start + next(i for i, c in enumerate(costs) if c <= best + tol)
        bounds.append(best_e)
        start = best_e + 1
    bounds.append(n - 1)

    classes = []
    assignment = [0] * n
    lo = 0
    for ci, hi in enumerate(bounds):
        members = order[lo : hi + 1]
        for idx in members:
            assignment[idx] = ci
        classes.append(
            JenksClass(
                min_value=svals[lo], max_value=svals[hi], member_count=hi - lo + 1
            )
        )
        lo = hi + 1
    return JenksClassification(k=k, classes=tuple(classes), assignment=tuple(assignment))
