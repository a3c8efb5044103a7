"""Open asymmetric TSP over the selected viewpoints.

Index 0 is always the current robot position; the return column is forced to
zero so the cyclic formulation solves the open-tour problem. Small instances
are solved exactly by dynamic programming over subsets; larger ones by
nearest-neighbor construction plus segment-reversal and relocation moves.
"""

from __future__ import annotations

import math

import numpy as np


class CostMatrix:
    """Square travel-time estimates; row/col 0 is the current pose."""

    def __init__(self, values: np.ndarray, labels: list, sentinel: float):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("cost matrix must be square")
        if values.shape[0] != len(labels) + 1:
            raise ValueError("need one label per viewpoint")
        self.values = values
        self.labels = labels
        self.sentinel = sentinel
        self.values[:, 0] = 0.0          # open tour: returning home is free
        np.fill_diagonal(self.values, 0.0)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def reachable_mask(self):
        """Viewpoints whose approach column is not entirely sentinel."""
        k = self.size - 1
        mask = np.ones(k, dtype=bool)
        for j in range(1, k + 1):
            if np.all(self.values[:, j] >= self.sentinel):
                mask[j - 1] = False
        return mask


def tour_cost(values: np.ndarray, order) -> float:
    total, prev = 0.0, 0
    for node in order:
        total += values[prev, node]
        prev = node
    return total


def solve_exact(values: np.ndarray):
    """Held-Karp dynamic program for the open tour from node 0."""
    k = values.shape[0] - 1
    if k == 0:
        return [], 0.0
    full = 1 << k
    dp = np.full((full, k), math.inf)
    parent = np.full((full, k), -1, dtype=int)
    for j in range(k):
        dp[1 << j, j] = values[0, j + 1]
    for mask in range(full):
        for j in range(k):
            if not mask & (1 << j) or not math.isfinite(dp[mask, j]):
                continue
            base = dp[mask, j]
            for nxt in range(k):
                if mask & (1 << nxt):
                    continue
                nm = mask | (1 << nxt)
                cost = base + values[j + 1, nxt + 1]
                if cost < dp[nm, nxt]:
                    dp[nm, nxt] = cost
                    parent[nm, nxt] = j
    last = int(np.argmin(dp[full - 1]))
    best = float(dp[full - 1, last])
    order = []
    mask, j = full - 1, last
    while j >= 0:
        order.append(j + 1)
        pj = parent[mask, j]
        mask &= ~(1 << j)
        j = pj
    order.reverse()
    return order, best


def nearest_neighbor(values: np.ndarray):
    k = values.shape[0] - 1
    order, visited, prev = [], set(), 0
    for _ in range(k):
        best, best_c = None, math.inf
        for j in range(1, k + 1):
            if j in visited:
                continue
            if values[prev, j] < best_c:
                best, best_c = j, values[prev, j]
        order.append(best)
        visited.add(best)
        prev = best
    return order


def improve(values: np.ndarray, order):
    """Segment reversal and single-node relocation until no improving move.

    Reversals recompute the directional cost, which keeps the move valid for
    asymmetric matrices.
    """
    order = list(order)
    best_cost = tour_cost(values, order)
    improved = True
    while improved:
        improved = False
        n = len(order)
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                c = tour_cost(values, cand)
                if c < best_cost - 1e-12:
                    order, best_cost, improved = cand, c, True
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                cand = order[:i] + order[i + 1:]
                cand = cand[:j] + [order[i]] + cand[j:]
                c = tour_cost(values, cand)
                if c < best_cost - 1e-12:
                    order, best_cost, improved = cand, c, True
    return order, best_cost


def solve_heuristic(values: np.ndarray):
    seed = nearest_neighbor(values)
    return improve(values, seed)


def solve_atsp(matrix: CostMatrix, exact_cutoff: int = 9):
    """Open tour visiting every reachable viewpoint, starting at index 0.

    Returns (order over matrix indices, cost, dropped-label list).
    """
    mask = matrix.reachable_mask()
    dropped = [matrix.labels[i] for i in range(len(mask)) if not mask[i]]
    keep = [0] + [i + 1 for i in range(len(mask)) if mask[i]]
    sub = matrix.values[np.ix_(keep, keep)]
    k = len(keep) - 1
    if k == 0:
        return [], 0.0, dropped
    if k <= exact_cutoff:
        order, cost = solve_exact(sub)
    else:
        order, cost = solve_heuristic(sub)
    return [keep[i] for i in order], cost, dropped
