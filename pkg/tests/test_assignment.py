import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capacon.tracker import solve_assignment

INF = math.inf


def brute_force(cost):
    """Enumerate every partial assignment: max cardinality, then min cost,
    then lexicographically smallest pair sequence."""
    m = len(cost)
    n = len(cost[0]) if m else 0
    best = (0, 0.0, [])

    def recurse(i, used, picked, total):
        nonlocal best
        if i == m:
            key = (-len(picked), total)
            if key < (-(len(best[2])), best[1]):
                best = (len(picked), total, picked.copy())
            return
        for j in range(n):
            if j not in used and cost[i][j] < INF:
                picked.append((i, j))
                used.add(j)
                recurse(i + 1, used, picked, total + cost[i][j])
                used.discard(j)
                picked.pop()
        recurse(i + 1, used, picked, total)

    recurse(0, set(), [], 0.0)
    return best


class TestExamples:
    def test_single_cell(self):
        assert solve_assignment([[0.0]]) == [(0, 0)]

    def test_two_by_two_prefers_cross(self):
        # brute force: straight = 1 + 4 = 5, cross = 2 + 2 = 4
        pairs = solve_assignment([[1.0, 2.0], [2.0, 4.0]])
        assert sorted(pairs) == [(0, 1), (1, 0)]
        assert sum([[1.0, 2.0], [2.0, 4.0]][i][j] for i, j in pairs) == 4.0

    def test_diagonal_only_finite(self):
        cost = [
            [0.0, INF, INF],
            [INF, 0.0, INF],
            [INF, INF, 0.0],
        ]
        assert sorted(solve_assignment(cost)) == [(0, 0), (1, 1), (2, 2)]

    def test_all_infinite_empty(self):
        assert solve_assignment([[INF, INF], [INF, INF]]) == []

    def test_empty_matrix(self):
        assert solve_assignment([]) == []

    def test_rectangular_wide(self):
        assert solve_assignment([[5.0, 1.0, 3.0]]) == [(0, 1)]

    def test_rectangular_tall(self):
        assert solve_assignment([[5.0], [1.0], [3.0]]) == [(1, 0)]

    def test_max_cardinality_beats_cheap_single(self):
        # {(0,0)} alone costs 0, but the two-pair assignment is preferred
        cost = [[0.0, INF], [0.0, 10.0]]
        assert sorted(solve_assignment(cost)) == [(0, 0), (1, 1)]

    def test_lexicographic_tie_break(self):
        # both diagonals cost 2; (0,0),(1,1) is the lex-smaller sequence
        pairs = solve_assignment([[1.0, 1.0], [1.0, 1.0]])
        assert pairs == [(0, 0), (1, 1)]

    def test_lexicographic_tie_break_larger(self):
        cost = [[1.0, 1.0, 1.0]] * 3 + []
        cost = [row.copy() for row in cost]
        assert solve_assignment(cost) == [(0, 0), (1, 1), (2, 2)]


class TestOracle:
    @pytest.mark.parametrize("n", range(1, 6))
    def test_small_squares_match_brute_force(self, n):
        rng = random.Random(100 + n)
        for _ in range(200):
            cost = [[rng.uniform(0, 10) for _ in range(n)] for _ in range(n)]
            pairs = solve_assignment(cost)
            k, total, best_pairs = brute_force(cost)
            assert len(pairs) == k
            got = sum(cost[i][j] for i, j in pairs)
            assert got == pytest.approx(total, abs=1e-9)
            assert pairs == best_pairs  # lex tie-break matches enumeration

    @pytest.mark.parametrize("shape", [(2, 4), (4, 2), (3, 5), (5, 3), (1, 6), (6, 1)])
    def test_rectangular_match_brute_force(self, shape):
        m, n = shape
        rng = random.Random(m * 10 + n)
        for _ in range(100):
            cost = [[rng.uniform(-5, 5) for _ in range(n)] for _ in range(m)]
            pairs = solve_assignment(cost)
            k, total, _ = brute_force(cost)
            assert len(pairs) == k == min(m, n)
            assert sum(cost[i][j] for i, j in pairs) == pytest.approx(total, abs=1e-9)

    @pytest.mark.parametrize("n", range(2, 6))
    def test_with_forbidden_cells(self, n):
        rng = random.Random(77 + n)
        for _ in range(150):
            cost = [
                [INF if rng.random() < 0.4 else rng.uniform(0, 10) for _ in range(n)]
                for _ in range(n)
            ]
            pairs = solve_assignment(cost)
            k, total, best_pairs = brute_force(cost)
            assert len(pairs) == k
            assert all(cost[i][j] < INF for i, j in pairs)
            assert sum(cost[i][j] for i, j in pairs) == pytest.approx(total, abs=1e-9)
            assert pairs == best_pairs

    def test_negative_costs(self):
        cost = [[-5.0, -1.0], [-1.0, -5.0]]
        pairs = solve_assignment(cost)
        assert sorted(pairs) == [(0, 0), (1, 1)]


@given(
    st.integers(2, 5),
    st.integers(2, 5),
    st.randoms(use_true_random=False),
)
@settings(max_examples=60, deadline=None)
def test_property_rows_cols_used_once(m, n, rnd):
    cost = [
        [INF if rnd.random() < 0.3 else rnd.uniform(0, 1) for _ in range(n)]
        for _ in range(m)
    ]
    pairs = solve_assignment(cost)
    rows = [i for i, _ in pairs]
    cols = [j for _, j in pairs]
    assert len(set(rows)) == len(rows)
    assert len(set(cols)) == len(cols)
    assert all(cost[i][j] < INF for i, j in pairs)
