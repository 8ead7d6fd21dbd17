"""Log-domain Sinkhorn solver for entropy-regularized optimal transport.

Solves  min_pi <pi, C> + eps * R(pi)  over couplings of (mu, nu), with
R(pi) = sum_ij pi_ij * (ln(pi_ij / (mu_i nu_j)) - 1).  All updates run in
the log domain with max-shifted log-sum-exp, so eps down to ~1e-3 is fine.
Note the "-1" in R: the independence coupling mu nu^T has regularized
value -eps, and the reported `regularized_value` keeps that convention to
stay comparable with the semi-dual objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import as_weights, check_cost_matrix


def _logsumexp_rows(M: np.ndarray) -> np.ndarray:
    """Max-shifted log-sum-exp over rows of a finite matrix."""
    mx = M.max(axis=1)
    return np.log(np.exp(M - mx[:, None]).sum(axis=1)) + mx


@dataclass(frozen=True)
class SinkhornResult:
    """Converged plan, potentials and objective values.

    ``plan[i, j] = mu_i * nu_j * exp((u_i + v_j - C_ij) / eps)``. Atoms with
    zero mass are dropped before solving; their plan rows/columns are zero
    and their potentials are reported as 0. ``error_history`` holds the
    marginal max-norm error after each iteration; ``objective_history`` the
    dual objective (equal to the semi-dual value of the current second
    potential) at the start of each iteration.
    """

    plan: np.ndarray
    dual_u: np.ndarray
    dual_v: np.ndarray
    transport_cost: float
    regularized_value: float
    iterations: int
    marginal_error: float
    converged: bool
    error_history: np.ndarray
    objective_history: np.ndarray


def plan_marginal_error(plan, mu, nu) -> float:
    """Max-norm deviation of the plan's marginals from (mu, nu)."""
    plan = np.asarray(plan, dtype=np.float64)
    a = as_weights(mu)
    b = as_weights(nu)
    if plan.shape != (a.shape[0], b.shape[0]):
        raise ValueError(
            f"plan shape {plan.shape} incompatible with marginals "
            f"({a.shape[0]}, {b.shape[0]})"
        )
    row_err = np.abs(plan.sum(axis=1) - a).max()
    col_err = np.abs(plan.sum(axis=0) - b).max()
    return float(max(row_err, col_err))


def sinkhorn_solve(
    mu,
    nu,
    C,
    epsilon: float,
    max_iter: int = 10_000,
    tol: float = 1e-9,
) -> SinkhornResult:
    """Run log-domain Sinkhorn iterations until the marginal error is <= tol.

    Convergence is declared on the max-norm marginal deviation of the
    current plan. If `max_iter` is reached first, the result is returned
    with ``converged=False`` rather than silently accepted.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    a_full = as_weights(mu)
    b_full = as_weights(nu)
    C_full = check_cost_matrix(C, a_full.shape[0], b_full.shape[0])

    # Zero-mass atoms receive no transport; drop them and pad the result.
    rows = np.flatnonzero(a_full > 0)
    cols = np.flatnonzero(b_full > 0)
    a = a_full[rows]
    b = b_full[cols]
    Csub = C_full[np.ix_(rows, cols)]

    log_a = np.log(a)
    log_b = np.log(b)
    # Work with the eps-scaled potentials phi = u/eps, psi = v/eps.
    Ce = Csub / epsilon
    phi = np.zeros_like(a)
    psi = np.zeros_like(b)
    err = np.inf
    history = []
    objective_history = []
    it = 0
    while it < max_iter:
        phi = -_logsumexp_rows(log_b[None, :] + psi[None, :] - Ce)
        # Right after the phi-update, u is the exact smoothed c-transform of
        # v, so the dual value a.u + b.v - eps equals the semi-dual objective.
        objective_history.append(float(epsilon * (a @ phi + b @ psi) - epsilon))
        half = (log_a + phi)[:, None] - Ce  # log plan without the target factor
        psi = -_logsumexp_rows(half.T)
        it += 1
        # After the psi-update columns match b exactly; rows carry the error.
        log_plan = half + (log_b + psi)[None, :]
        row_sums = np.exp(_logsumexp_rows(log_plan))
        col_sums = np.exp(_logsumexp_rows(log_plan.T))
        err = max(np.abs(row_sums - a).max(), np.abs(col_sums - b).max())
        history.append(err)
        if err <= tol:
            break

    u = epsilon * phi
    v = epsilon * psi
    plan_sub = np.exp(log_plan)
    transport_cost = float((plan_sub * Csub).sum())
    # R(pi) = sum pi * ((u_i + v_j - C_ij)/eps - 1), exact for this plan form.
    relative_entropy = float(
        (plan_sub * (phi[:, None] + psi[None, :] - Ce - 1.0)).sum()
    )
    regularized_value = transport_cost + epsilon * relative_entropy

    plan = np.zeros_like(C_full)
    plan[np.ix_(rows, cols)] = plan_sub
    dual_u = np.zeros_like(a_full)
    dual_v = np.zeros_like(b_full)
    dual_u[rows] = u
    dual_v[cols] = v
    return SinkhornResult(
        plan=plan,
        dual_u=dual_u,
        dual_v=dual_v,
        transport_cost=transport_cost,
        regularized_value=regularized_value,
        iterations=it,
        marginal_error=float(err),
        converged=bool(err <= tol),
        error_history=np.asarray(history),
        objective_history=np.asarray(objective_history),
    )
