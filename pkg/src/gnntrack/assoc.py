"""Optimal and greedy bipartite matching over cost / affinity matrices."""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import Assignment


class NonFiniteCostError(ValueError):
    pass


def solve_assignment(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one matching of ``min(M, N)`` pairs.

    Shortest augmenting paths on the rectangular matrix (wide matrices
    directly, tall ones via the transpose). Among equal-cost solutions the
    search prefers unassigned, then lower-index columns, so e.g. an all-zero
    2x3 matrix yields (0, 0), (1, 1). Returns (row, col) pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        bad = np.argwhere(~np.isfinite(cost))[0]
        raise NonFiniteCostError(f"non-finite cost at ({bad[0]}, {bad[1]})")
    M, N = cost.shape
    if M == 0 or N == 0:
        return []
    if M <= N:
        cols = kernels.lap_solve(np.ascontiguousarray(cost))
        return [(i, int(cols[i])) for i in range(M)]
    rows = kernels.lap_solve(np.ascontiguousarray(cost.T))
    return sorted((int(rows[j]), j) for j in range(N))


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost)
    return float(sum(cost[i, j] for i, j in pairs))


def _finish(pairs, M: int, N: int) -> Assignment:
    pairs = sorted(pairs)
    rows = {i for i, _ in pairs}
    cols = {j for _, j in pairs}
    return Assignment(pairs, [i for i in range(M) if i not in rows],
                      [j for j in range(N) if j not in cols])


def match_with_gating(affinity, threshold: float = 0.5, mask=None) -> Assignment:
    """Hungarian matching on ``1 - affinity``; pairs below ``threshold`` are dropped.

    ``mask`` (bool, M x N) marks pairs that may be matched at all; masked
    pairs are treated as affinity 0.
    """
    A = np.asarray(affinity, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"affinity must be 2-D, got shape {A.shape}")
    if mask is not None:
        A = np.where(np.asarray(mask, dtype=bool), A, 0.0)
    M, N = A.shape
    kept = [(i, j) for i, j in solve_assignment(1.0 - A) if A[i, j] >= threshold]
    return _finish(kept, M, N)


def greedy_match(score, threshold: float) -> Assignment:
    """Greedy matching by descending score, accepting pairs with score >= threshold.

    Ties go to the lower row, then the lower column. Used by the IoU baseline.
    """
    S = np.asarray(score, dtype=np.float64)
    M, N = S.shape
    order = sorted(((-S[i, j], i, j) for i in range(M) for j in range(N) if S[i, j] >= threshold))
    used_r, used_c, pairs = set(), set(), []
    for _, i, j in order:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return _finish(pairs, M, N)
