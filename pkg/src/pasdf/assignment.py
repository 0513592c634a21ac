"""Exact minimum-cost assignment.

Hungarian algorithm in the shortest-augmenting-path form with row/column
potentials, O(n^3) over a dense square cost matrix.  Rows are inserted one
at a time; each insertion runs a Dijkstra-like sweep whose inner column
scan is vectorized.  This is the workhorse behind the optimal-transport
distance between equal-size point sets.
"""
from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInputError
from .geometry import F64


def solve_assignment(cost: NDArray[F64]) -> tuple[NDArray[np.int_], float]:
    """Column assigned to each row under the minimum-total-cost bijection.

    Returns (assignment, total) where assignment[i] is the column matched
    to row i and total is the exact optimal cost.
    """
    matrix = np.ascontiguousarray(cost, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"cost matrix must be square, got {matrix.shape}")
    if matrix.size == 0:
        raise InvalidInputError("cost matrix must be non-empty")
    if not np.isfinite(matrix).all():
        raise InvalidInputError("cost matrix contains non-finite entries")

    n = matrix.shape[0]
    # 1-indexed working arrays; column 0 is the sentinel the augmenting
    # path starts from.  matched_row[j] = row currently matched to column j.
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = matrix
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    matched_row = np.zeros(n + 1, dtype=np.int64)
    prev_col = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        matched_row[0] = row
        j0 = 0
        min_slack = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = matched_row[j0]
            reduced = padded[i0, 1:] - u[i0] - v[1:]
            free = ~used[1:]
            tighter = free & (reduced < min_slack[1:])
            min_slack[1:][tighter] = reduced[tighter]
            prev_col[1:][tighter] = j0
            candidates = np.where(free, min_slack[1:], np.inf)
            j_best = int(np.argmin(candidates))
            delta = float(candidates[j_best])
            u[matched_row[used]] += delta
            v[used] -= delta
            min_slack[~used] -= delta
            j0 = j_best + 1
            if matched_row[j0] == 0:
                break
        while j0 != 0:
            j_prev = prev_col[j0]
            matched_row[j0] = matched_row[j_prev]
            j0 = j_prev

    assignment = np.empty(n, dtype=np.int64)
    assignment[matched_row[1:] - 1] = np.arange(n)
    total = float(matrix[np.arange(n), assignment].sum())
    return assignment, total
