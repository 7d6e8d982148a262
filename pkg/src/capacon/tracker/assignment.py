"""Minimum-cost assignment with forbidden (+inf) cells.

solve_assignment returns, among all assignments of maximum cardinality over
the finite-cost cells, one with minimum total cost; cost ties are broken
toward the lexicographically smallest (row, col) pair sequence so results
are reproducible across runs and platforms.
"""

from __future__ import annotations

import math
from typing import Sequence

_INF = math.inf

# Relative tolerance when comparing float assignment costs during the
# lexicographic refinement; plain summation reorders are within 1e-12.
_REL_TOL = 1e-9


def solve_assignment(cost: Sequence[Sequence[float]]) -> list[tuple[int, int]]:
    """Return the optimal (row, col) pairs for an m x n cost matrix.

    Maximizes the number of matched pairs over cells with finite cost, then
    minimizes the summed cost, then prefers the lexicographically smallest
    pair sequence. The empty assignment is always feasible.
    """
    m = len(cost)
    n = len(cost[0]) if m else 0
    if m == 0 or n == 0:
        return []
    if m == 1 or n == 1 or (m <= 3 and n <= 3):
        return _solve_tiny(cost, m, n)
    pairs = _solve_padded(cost, m, n)
    if len(pairs) <= 1:
        return pairs
    total = sum(cost[i][j] for i, j in pairs)
    return _lex_refine(cost, m, n, len(pairs), total)


def _solve_tiny(cost, m: int, n: int) -> list[tuple[int, int]]:
    """Exhaustive search; first-found ordering yields the lexicographic best."""
    if m == 1:
        best_j = -1
        best_c = _INF
        for j in range(n):
            c = cost[0][j]
            if c < best_c:
                best_c = c
                best_j = j
        return [(0, best_j)] if best_j >= 0 else []
    if n == 1:
        best_i = -1
        best_c = _INF
        for i in range(m):
            c = cost[i][0]
            if c < best_c:
                best_c = c
                best_i = i
        return [(best_i, 0)] if best_i >= 0 else []

    best: list[tuple[int, int]] = []
    best_key = (0, 0.0)

    def recurse(i: int, used_cols: int, picked: list[tuple[int, int]], total: float):
        nonlocal best, best_key
        if i == m:
            key = (-len(picked), total)
            if key < best_key:
                best_key = key
                best = picked.copy()
            return
        row = cost[i]
        for j in range(n):
            if not used_cols & (1 << j):
                c = row[j]
                if c < _INF:
                    picked.append((i, j))
                    recurse(i + 1, used_cols | (1 << j), picked, total + c)
                    picked.pop()
        recurse(i + 1, used_cols, picked, total)

    recurse(0, 0, [], 0.0)
    return best


def _solve_padded(cost, m: int, n: int) -> list[tuple[int, int]]:
    """Hungarian on a square matrix where forbidden cells carry a penalty
    large enough that cardinality dominates cost."""
    finite = [c for row in cost for c in row if c < _INF]
    if not finite:
        return []
    lo = min(finite)
    hi = max(finite)
    size = max(m, n)
    big = (hi - lo) * size + 1.0
    a = [[big] * size for _ in range(size)]
    for i in range(m):
        row = cost[i]
        out = a[i]
        for j in range(n):
            c = row[j]
            if c < _INF:
                out[j] = c - lo
    col_of = _hungarian_square(a, size)
    pairs = [
        (i, j)
        for i, j in enumerate(col_of)
        if i < m and j < n and cost[i][j] < _INF
    ]
    pairs.sort()
    return pairs


def _hungarian_square(a: list[list[float]], n: int) -> list[int]:
    """O(n^3) Hungarian with potentials; returns column index per row."""
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row (1-based) matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            row = a[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of = [-1] * n
    for j in range(1, n + 1):
        if p[j]:
            col_of[p[j] - 1] = j - 1
    return col_of


def _optimum(cost, rows: list[int], cols: list[int]) -> tuple[int, float]:
    """(cardinality, total cost) of the optimum on a row/col submatrix."""
    if not rows or not cols:
        return 0, 0.0
    sub = [[cost[i][j] for j in cols] for i in rows]
    mr, nc = len(rows), len(cols)
    if mr == 1 or nc == 1 or (mr <= 3 and nc <= 3):
        pairs = _solve_tiny(sub, mr, nc)
    else:
        pairs = _solve_padded(sub, mr, nc)
    return len(pairs), sum(sub[i][j] for i, j in pairs)


def _lex_refine(
    cost, m: int, n: int, k_star: int, c_star: float
) -> list[tuple[int, int]]:
    """Fix pairs in lexicographic order whenever an optimal completion exists."""
    tol = _REL_TOL * max(1.0, abs(c_star))
    chosen: list[tuple[int, int]] = []
    chosen_cost = 0.0
    free_cols = list(range(n))
    rows_left = list(range(m))
    for i in range(m):
        rows_left.remove(i)
        fixed_j = -1
        for j in free_cols:
            c = cost[i][j]
            if c >= _INF:
                continue
            rest_cols = [x for x in free_cols if x != j]
            k2, c2 = _optimum(cost, rows_left, rest_cols)
            if (
                k2 + len(chosen) + 1 == k_star
                and chosen_cost + c + c2 <= c_star + tol
            ):
                fixed_j = j
                chosen.append((i, j))
                chosen_cost += c
                break
        if fixed_j >= 0:
            free_cols.remove(fixed_j)
        # otherwise row i stays unassigned in every optimal completion
    return chosen
