import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gmner.assignment import Assignment, assignment_cost, brute_force_assignment, solve_hungarian
from gmner.core import InvalidInputError


def reference_min(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


class TestSolveHungarian:
    def test_known_instance(self):
        cost = np.array([[4.0, 1, 3], [2, 0, 5], [3, 2, 2]])
        a = solve_hungarian(cost)
        assert a.perm == (1, 0, 2)
        assert a.cost == 5.0

    def test_empty_and_single(self):
        assert solve_hungarian(np.zeros((0, 0))).perm == ()
        assert solve_hungarian(np.array([[3.5]])).cost == 3.5

    def test_all_ties_gives_identity(self):
        assert solve_hungarian(np.ones((5, 5))).perm == (0, 1, 2, 3, 4)

    def test_lexicographic_tie_break_matches_brute_force(self):
        cost = np.array([[0.0, 0, 1], [0, 0, 1], [1, 1, 0]])
        assert solve_hungarian(cost).perm == brute_force_assignment(cost).perm == (0, 1, 2)

    def test_tiny_entry_breaks_near_tie(self):
        # tolerance-level tie whose lex-smallest tolerance optimum is not an exact optimum
        cost = np.zeros((4, 4))
        cost[0, 0], cost[3, 0] = 1.0, -1.76631402e-37
        assert solve_hungarian(cost) == brute_force_assignment(cost)
        assert solve_hungarian(cost).perm == (1, 2, 3, 0)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            solve_hungarian(np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            solve_hungarian(np.array([[0.0, np.nan], [1, 1]]))
        with pytest.raises(InvalidInputError):
            solve_hungarian(np.array([[0.0, np.inf], [1, 1]]))

    def test_large_penalties(self):
        cost = np.array([[1e4, -2.5], [-3.1, 1e4]])
        assert solve_hungarian(cost).perm == (1, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=st.integers(-5000, 5000).map(lambda x: x / 100))))
    def test_matches_exhaustive_search(self, cost):
        a = solve_hungarian(cost)
        b = brute_force_assignment(cost)
        assert a == b
        assert abs(a.cost - reference_min(cost)) <= 1e-9 * max(1.0, np.abs(cost).max())

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-50, 50))))
    def test_near_optimal_on_arbitrary_floats(self, cost):
        # entries like 1e-300 next to 1.0 are below the solver's resolution; only the total is checked
        a = solve_hungarian(cost)
        assert abs(a.cost - brute_force_assignment(cost).cost) <= 1e-9 * np.abs(cost).max()

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 6).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(0, 2))))
    def test_integer_ties(self, cost):
        cost = cost.astype(float)
        assert solve_hungarian(cost) == brute_force_assignment(cost)


class TestAssignment:
    def test_perm_validation(self):
        with pytest.raises(InvalidInputError):
            Assignment((0, 0), 1.0)

    def test_cost_is_sum(self):
        cost = np.arange(9.0).reshape(3, 3)
        assert assignment_cost(cost, (2, 0, 1)) == 2 + 3 + 7
