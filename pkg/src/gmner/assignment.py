"""Exact minimum-cost assignment (Hungarian / shortest augmenting path).

The solver returns the lexicographically smallest optimal permutation so that
equal-cost ties (very common: all null rows of a padded gold set cost the
same) resolve deterministically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .core import InvalidInputError


@dataclass(frozen=True)
class Assignment:
    """``perm[i]`` is the column (query) assigned to row (padded gold entry) ``i``."""

    perm: Tuple[int, ...]
    cost: float

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise InvalidInputError(f"not a permutation: {self.perm}")


def assignment_cost(cost: np.ndarray, perm) -> float:
    # fsum gives a correctly rounded total independent of summation order
    return math.fsum(float(cost[i, j]) for i, j in enumerate(perm))


def _check_square(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise InvalidInputError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("cost matrix contains non-finite entries")
    return cost


def _shortest_augmenting_path(cost: np.ndarray):
    """O(n^3) primal-dual solver. Returns row->col matching and the dual potentials."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_refine(tight: np.ndarray, match: np.ndarray) -> np.ndarray:
    """Turn any perfect matching of the tight-edge graph into its lex-smallest one.

    Rows are fixed in order; row ``i`` may move to a smaller tight column ``j``
    iff the row currently holding ``j`` can reach ``i``'s old column through an
    alternating path over unfixed rows.
    """
    n = len(match)
    match = match.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    for i in range(n):
        target = match[i]
        for j in np.flatnonzero(tight[i, :target]):
            r = owner[j]
            if r < i:
                continue
            # BFS over rows > i; column j is reserved for row i
            parent = {r: None}
            frontier = [r]
            found = None
            seen_cols = {j}
            while frontier and found is None:
                nxt = []
                for row in frontier:
                    for c in np.flatnonzero(tight[row]):
                        if c in seen_cols:
                            continue
                        if c == target:
                            found = (row, c)
                            break
                        o = owner[c]
                        if o <= i:
                            continue
                        seen_cols.add(c)
                        parent[o] = (row, c)
                        nxt.append(o)
                    if found is not None:
                        break
                frontier = nxt
            if found is None:
                continue
            row, c = found
            while True:
                prev = parent[row]
                match[row] = c
                owner[c] = row
                if prev is None:
                    break
                row, c = prev
            match[i] = j
            owner[j] = i
            break
    return match


def solve_hungarian(cost, tol: float = 1e-10) -> Assignment:
    """Minimum-cost bijection rows -> columns for a square finite cost matrix.

    Among all minimizers the lexicographically smallest permutation is
    returned. Two assignments whose totals differ by less than roughly
    ``tol * max|cost|`` per entry are treated as tied.
    """
    cost = _check_square(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    match, u, v = _shortest_augmenting_path(cost)
    # relative to the matrix scale so that uniformly tiny costs are not all treated as ties
    scale = float(np.abs(cost).max())
    reduced = cost - u[:, None] - v[None, :]
    found = tuple(int(j) for j in match)
    found_cost = assignment_cost(cost, found)
    # a near-tie within tolerance must not cost more than the solver's own optimum;
    # if it does, retry with only exactly tight edges before giving up on refinement
    for eps in (tol * scale, 0.0):
        tight = reduced <= eps
        tight[np.arange(n), match] = True
        refined = tuple(int(j) for j in _lexicographic_refine(tight, match.copy()))
        refined_cost = assignment_cost(cost, refined)
        if refined_cost <= found_cost:
            return Assignment(refined, refined_cost)
    return Assignment(found, found_cost)


@lru_cache(maxsize=16)
def _all_permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def brute_force_assignment(cost) -> Assignment:
    """Exhaustive oracle over all n! permutations (n <= 8 or so).

    Permutations are enumerated in lexicographic order, so the first exact
    minimizer is also the lexicographically smallest one.
    """
    cost = _check_square(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    perms = _all_permutations(n)
    totals = cost[np.arange(n), perms].sum(axis=1)
    # re-total the near-minimal candidates exactly so the choice does not hinge on float summation order
    slack = 1e-9 * max(1.0, float(np.abs(cost).max())) * n
    best_perm, best_cost = None, math.inf
    for idx in np.flatnonzero(totals <= totals.min() + slack):
        c = assignment_cost(cost, perms[idx])
        if c < best_cost:
            best_perm, best_cost = tuple(int(x) for x in perms[idx]), c
    return Assignment(best_perm, best_cost)
