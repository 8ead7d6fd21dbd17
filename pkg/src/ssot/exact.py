"""Exact optimal transport on tiny instances, used as oracles for the solvers.

Two independent routes:

* permutation enumeration for uniform square instances (the optimum of
  uniform equal-size OT is attained at a permutation), and
* a small transportation simplex (northwest-corner start, Bland-rule
  pivoting) for general marginals.

Both are deliberately brute force; size limits keep them honest.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, check_cost_matrix

MAX_PERMUTATION_N = 8
MAX_SIMPLEX_CELLS = 64

_OPT_TOL = 1e-12


@dataclass(frozen=True)
class ExactSolution:
    """Minimal transport cost together with an optimal coupling."""

    value: float
    plan: np.ndarray


def exact_ot_uniform_square(C) -> ExactSolution:
    """Exact OT for uniform 1/n marginals on an n-by-n cost matrix.

    Enumerates all n! assignments; ties are broken by lexicographic
    permutation order so the result is deterministic. Rejects n > 8.
    """
    C = check_cost_matrix(C)
    n = C.shape[0]
    if C.shape[1] != n:
        raise ValueError(f"expected a square cost matrix, got {C.shape}")
    if n > MAX_PERMUTATION_N:
        raise ValueError(f"n={n} exceeds the enumeration limit {MAX_PERMUTATION_N}")
    rows = np.arange(n)
    best_perm = None
    best_sum = np.inf
    for perm in itertools.permutations(range(n)):
        s = C[rows, perm].sum()
        if s < best_sum:
            best_sum = s
            best_perm = perm
    plan = np.zeros((n, n))
    plan[rows, best_perm] = 1.0 / n
    return ExactSolution(value=best_sum / n, plan=plan)


def exact_ot_general(mu: DiscreteMeasure, nu: DiscreteMeasure, C) -> ExactSolution:
    """Exact OT for arbitrary discrete marginals via the transportation simplex.

    Starts from the northwest-corner plan and pivots with Bland's rule
    (first negative reduced cost in row-major order), which cannot cycle
    even on degenerate instances. Limited to ``n_s * n_t <= 64`` cells.
    """
    a = np.asarray(mu.weights if isinstance(mu, DiscreteMeasure) else mu, dtype=np.float64)
    b = np.asarray(nu.weights if isinstance(nu, DiscreteMeasure) else nu, dtype=np.float64)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    if a.shape[0] * b.shape[0] > MAX_SIMPLEX_CELLS:
        raise ValueError(
            f"instance has {a.shape[0] * b.shape[0]} cells, "
            f"limit is {MAX_SIMPLEX_CELLS}"
        )
    # Zero-mass atoms only add degeneracy; solve on the support and pad back.
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    sub_plan = _transportation_simplex(a[rows], b[cols], C[np.ix_(rows, cols)])
    plan = np.zeros_like(C)
    plan[np.ix_(rows, cols)] = sub_plan
    return ExactSolution(value=float((plan * C).sum()), plan=plan)


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible plan with exactly m+n-1 basic cells."""
    m, n = a.shape[0], b.shape[0]
    plan = np.zeros((m, n))
    basis = []
    supply = a.copy()
    demand = b.copy()
    i = j = 0
    while True:
        q = min(supply[i], demand[j])
        plan[i, j] = q
        basis.append((i, j))
        supply[i] -= q
        demand[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # On simultaneous exhaustion step only one index so the basis keeps
        # m+n-1 cells (the extra cell is a degenerate zero).
        if supply[i] <= demand[j] and i < m - 1:
            i += 1
        else:
            j += 1
    return plan, basis


def _compute_potentials(basis, C, m, n):
    """Solve u_i + v_j = C_ij on the spanning tree of basic cells, u_0 = 0."""
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    row_adj = [[] for _ in range(m)]
    col_adj = [[] for _ in range(n)]
    for (i, j) in basis:
        row_adj[i].append(j)
        col_adj[j].append(i)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in row_adj[k]:
                if np.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in col_adj[k]:
                if np.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    stack.append(("r", i))
    return u, v


def _find_cycle(basis, entering):
    """Unique alternating cycle created by adding `entering` to the basis tree.

    Returns the cycle as a list of cells starting at `entering`, alternating
    row moves and column moves.
    """
    cells = set(basis)
    rows_to_cells = {}
    cols_to_cells = {}
    for cell in cells | {entering}:
        rows_to_cells.setdefault(cell[0], []).append(cell)
        cols_to_cells.setdefault(cell[1], []).append(cell)

    # Depth-first search over cells, alternating between moving along a row
    # and along a column, looking for a loop back to the entering cell.
    def search(path, move_along_row):
        cur = path[-1]
        neighbors = rows_to_cells[cur[0]] if move_along_row else cols_to_cells[cur[1]]
        for nxt in neighbors:
            if nxt == cur:
                continue
            if nxt == entering and len(path) >= 4 and not move_along_row:
                return path
            if nxt in path:
                continue
            result = search(path + [nxt], not move_along_row)
            if result is not None:
                return result
        return None

    cycle = search([entering], True)
    if cycle is None:  # pragma: no cover - basis is always a spanning tree
        raise RuntimeError("no pivot cycle found; basis is corrupt")
    return cycle


def _transportation_simplex(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> np.ndarray:
    m, n = C.shape
    plan, basis = _northwest_corner(a, b)
    max_pivots = 1000 * (m + n)
    for _ in range(max_pivots):
        u, v = _compute_potentials(basis, C, m, n)
        reduced = C - u[:, None] - v[None, :]
        in_basis = np.zeros((m, n), dtype=bool)
        for (i, j) in basis:
            in_basis[i, j] = True
        candidates = np.argwhere(~in_basis & (reduced < -_OPT_TOL))
        if candidates.size == 0:
            return plan
        entering = tuple(candidates[0])  # Bland: first in row-major order
        cycle = _find_cycle(basis, entering)
        # Odd positions in the cycle lose mass; pick the first minimizer as
        # the leaving cell (deterministic under ties).
        givers = cycle[1::2]
        theta = min(plan[c] for c in givers)
        leaving = next(c for c in givers if plan[c] == theta)
        for idx, cell in enumerate(cycle):
            plan[cell] += theta if idx % 2 == 0 else -theta
        plan[leaving] = 0.0  # exact zero, avoids negative drift
        basis.remove(leaving)
        basis.append(entering)
    raise RuntimeError("transportation simplex failed to terminate")  # pragma: no cover
