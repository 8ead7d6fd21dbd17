"""Semi-dual entropic OT: smoothed c-transform and stochastic potential solvers.

The semi-dual objective over a target-side potential v is

    H_eps(v) = sum_i mu_i * v^{c,eps}(x_i) + sum_j nu_j * v_j - eps,

with the smoothed c-transform

    v^{c,eps}(x_i) = -eps * log sum_j nu_j exp((v_j - C_ij) / eps)   (eps > 0)
                   =  min_j (C_ij - v_j)                             (eps = 0).

H_eps is concave, shift-invariant in v, and its supremum equals the
regularized OT value reported by the Sinkhorn solver (same -eps constant).
Three maximizers are provided: plain mini-batch gradient ascent on the
potential vector, stochastic averaged gradients with a per-source-atom
memory, and ascent on the weights of a network that parameterizes v.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .measures import DiscreteMeasure, as_weights, check_cost_matrix
from . import nnet

SOLVER_KINDS = ("sgd", "sag", "network")

# SAG keeps one gradient row per source atom; beyond this, use SGD.
SAG_MAX_SOURCE_ATOMS = 100_000


@dataclass(frozen=True)
class SemidualConfig:
    """Solver settings. ``epsilon=0`` selects the hard-min c-transform branch
    (objective evaluation only); the stochastic solvers need ``epsilon > 0``.

    ``batch_source``/``batch_target`` are clamped to the instance size, so the
    defaults give full-batch (deterministic) ascent on desk-scale instances.
    ``lr_decay="invsqrt"`` scales the step by 1/sqrt(t).
    """

    epsilon: float = 1.0
    learning_rate: float = 1.0
    inner_steps: int = 2000
    solver_kind: str = "sgd"
    batch_source: int = 32
    batch_target: int = 32
    lr_decay: str = "constant"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.solver_kind not in SOLVER_KINDS:
            raise ValueError(f"solver_kind must be one of {SOLVER_KINDS}")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr_decay not in ("constant", "invsqrt"):
            raise ValueError("lr_decay must be 'constant' or 'invsqrt'")

    def step_size(self, t: int) -> float:
        if self.lr_decay == "invsqrt":
            return self.learning_rate / np.sqrt(t)
        return self.learning_rate


class TraceRecorder:
    """Collects (iteration, objective, seconds) rows during a solve.

    Objectives are always full-support evaluations, so traces are free of
    mini-batch noise. Rows can be written out with fileio.append_trace_csv.
    """

    def __init__(self, every: int = 1):
        if every < 1:
            raise ValueError("every must be >= 1")
        self.every = every
        self.rows: list[tuple[int, float, float]] = []
        self._t0 = time.perf_counter()

    def reset_clock(self):
        self._t0 = time.perf_counter()

    def wants(self, step: int) -> bool:
        return step % self.every == 0

    def record(self, step: int, objective: float):
        self.rows.append((step, float(objective), time.perf_counter() - self._t0))


def smoothed_ctransform(cost_row, v, nu_weights, epsilon: float) -> float:
    """Smoothed c-transform of the potential v at one source point."""
    c = np.asarray(cost_row, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(nu_weights, dtype=np.float64)
    if not (c.shape == v.shape == b.shape) or c.ndim != 1:
        raise ValueError("cost_row, v and nu_weights must be 1-D of equal length")
    if c.size == 0 or not (b > 0).any():
        raise ValueError("empty target support")
    if epsilon == 0.0:
        return float((c - v)[b > 0].min())
    return float(-epsilon * logsumexp((v - c) / epsilon, b=b))


def ctransform_rows(C, v, nu_weights, epsilon: float) -> np.ndarray:
    """Smoothed c-transform at every source point (rows of C) at once."""
    C = np.asarray(C, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(nu_weights, dtype=np.float64)
    if not (b > 0).any():
        raise ValueError("empty target support")
    if epsilon == 0.0:
        masked = np.where(b[None, :] > 0, C - v[None, :], np.inf)
        return masked.min(axis=1)
    return -epsilon * logsumexp((v[None, :] - C) / epsilon, b=b[None, :], axis=1)


def semidual_objective(v, mu, nu, C, epsilon: float) -> float:
    """H_eps(v) over full support; equals the Sinkhorn regularized value at
    the optimum (including the -eps constant)."""
    a = as_weights(mu)
    b = as_weights(nu)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    v = np.asarray(v, dtype=np.float64)
    u = ctransform_rows(C, v, b, epsilon)
    return float(a @ u + b @ v - epsilon)


def _chi_rows(C_rows, v, b, epsilon: float) -> np.ndarray:
    """Row-stochastic kernel chi_ij = nu_j exp((v_j - C_ij)/eps) / (row sum).

    chi is the conditional plan given source atom i; the gradient of the
    c-transform wrt v is -chi.
    """
    with np.errstate(divide="ignore"):
        logits = np.log(b)[None, :] + (v[None, :] - C_rows) / epsilon
    logits -= logits.max(axis=1, keepdims=True)
    chi = np.exp(logits)
    chi /= chi.sum(axis=1, keepdims=True)
    return chi


def semidual_grad(v, mu, nu, C, epsilon: float) -> np.ndarray:
    """Full-support gradient of H_eps wrt v: nu_j - sum_i mu_i chi_ij."""
    if epsilon <= 0:
        raise ValueError("gradient requires epsilon > 0")
    a = as_weights(mu)
    b = as_weights(nu)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    v = np.asarray(v, dtype=np.float64)
    chi = _chi_rows(C, v, b, epsilon)
    return b - a @ chi


def _atom_multipliers(a: np.ndarray) -> np.ndarray:
    """Per-atom importance m_i = n * mu_i, so mu_i = m_i / n as in the
    reweighed empirical measure; uniform weights give m = 1."""
    return a * a.shape[0]


def _batch_grad(C_rows, v, b, m_batch, epsilon: float) -> np.ndarray:
    """Mini-batch gradient estimate nu_j - mean_i m_i chi_ij.

    The atom multipliers are renormalized to mean 1 within the batch (no-op
    for uniform weights and for full batches).
    """
    mean_m = m_batch.mean()
    if mean_m > 0:
        m_batch = m_batch / mean_m
    chi = _chi_rows(C_rows, v, b, epsilon)
    return b - (m_batch @ chi) / m_batch.shape[0]


def solve_vector_sgd(
    mu, nu, C, config: SemidualConfig, seed: int, trace: TraceRecorder | None = None
) -> np.ndarray:
    """Mini-batch gradient ascent on H_eps over the potential vector.

    Source atoms are sampled uniformly with replacement; their weights enter
    the gradient as multipliers. Deterministic given the seed.
    """
    if config.epsilon <= 0:
        raise ValueError("stochastic solvers require epsilon > 0")
    a = as_weights(mu)
    b = as_weights(nu)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    m = _atom_multipliers(a)
    n_s = a.shape[0]
    bs = min(config.batch_source, n_s)
    rng = np.random.default_rng(seed)
    v = np.zeros(b.shape[0])
    if trace is not None:
        trace.reset_clock()
        trace.record(0, semidual_objective(v, a, b, C, config.epsilon))
    for t in range(1, config.inner_steps + 1):
        idx = np.sort(rng.integers(0, n_s, size=bs)) if bs < n_s else np.arange(n_s)
        grad = _batch_grad(C[idx], v, b, m[idx], config.epsilon)
        v = v + config.step_size(t) * grad
        if trace is not None and trace.wants(t):
            trace.record(t, semidual_objective(v, a, b, C, config.epsilon))
    return v


def solve_vector_sag(
    mu, nu, C, config: SemidualConfig, seed: int, trace: TraceRecorder | None = None
) -> np.ndarray:
    """Stochastic averaged gradient ascent on H_eps.

    Keeps one weighted chi row per source atom and steps along
    nu - (average of the stored rows); sampled atoms refresh their row.
    Instances beyond SAG_MAX_SOURCE_ATOMS fall back to SGD (the gradient
    table would not fit) with a warning.
    """
    if config.epsilon <= 0:
        raise ValueError("stochastic solvers require epsilon > 0")
    a = as_weights(mu)
    b = as_weights(nu)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    n_s = a.shape[0]
    if n_s > SAG_MAX_SOURCE_ATOMS:
        warnings.warn(
            f"SAG gradient table would need {n_s} rows "
            f"(limit {SAG_MAX_SOURCE_ATOMS}); using SGD instead",
            stacklevel=2,
        )
        return solve_vector_sgd(mu, nu, C, config, seed, trace)
    m = _atom_multipliers(a)
    bs = min(config.batch_source, n_s)
    rng = np.random.default_rng(seed)
    v = np.zeros(b.shape[0])
    stored = np.zeros_like(C)
    stored_sum = np.zeros(b.shape[0])
    if trace is not None:
        trace.reset_clock()
        trace.record(0, semidual_objective(v, a, b, C, config.epsilon))
    for t in range(1, config.inner_steps + 1):
        # Sample without replacement so each stored row is refreshed once.
        idx = rng.choice(n_s, size=bs, replace=False) if bs < n_s else np.arange(n_s)
        fresh = m[idx, None] * _chi_rows(C[idx], v, b, config.epsilon)
        stored_sum += (fresh - stored[idx]).sum(axis=0)
        stored[idx] = fresh
        grad = b - stored_sum / n_s
        v = v + config.step_size(t) * grad
        if trace is not None and trace.wants(t):
            trace.record(t, semidual_objective(v, a, b, C, config.epsilon))
    return v


def potential_output_grad(C_rows, g_values, b, m_batch, epsilon: float) -> np.ndarray:
    """Gradient of the batch semi-dual value wrt the potential outputs
    g(z_j): nu_j - mean_i m_i chi_ij. Shared by the network solver and the
    adaptation trainer."""
    return _batch_grad(C_rows, g_values, b, m_batch, epsilon)


def solve_network(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost,
    potential_net: nnet.Mlp,
    config: SemidualConfig,
    seed: int,
    trace: TraceRecorder | None = None,
) -> tuple[nnet.Mlp, float]:
    """Ascend H_eps over the weights of a scalar-output potential network.

    ``cost`` is either a precomputed (n_s, n_t) matrix or a callable mapping
    (source_points, target_points) to one. The potential at target atom j is
    the network output g(z_j); gradients flow through g both in the linear
    term and inside the log-sum-exp, while source/target features are treated
    as constants. Returns the trained network and the final full-support
    objective. Deterministic given the seed.
    """
    if config.epsilon <= 0:
        raise ValueError("the network solver requires epsilon > 0")
    if potential_net.layer_dims[-1] != 1:
        raise ValueError(
            f"potential network must output a scalar, got dim {potential_net.layer_dims[-1]}"
        )
    if not isinstance(mu, DiscreteMeasure) or not isinstance(nu, DiscreteMeasure):
        raise TypeError("solve_network needs DiscreteMeasure inputs (points + weights)")
    a, b = mu.weights, nu.weights
    if callable(cost):
        C = check_cost_matrix(cost(mu.points, nu.points), a.shape[0], b.shape[0])
    else:
        C = check_cost_matrix(cost, a.shape[0], b.shape[0])
    m = _atom_multipliers(a)
    n_s, n_t = C.shape
    bs = min(config.batch_source, n_s)
    bt = min(config.batch_target, n_t)
    rng = np.random.default_rng(seed)
    adam = nnet.adam_init(potential_net, alpha=config.learning_rate)

    def full_objective() -> float:
        g_all = nnet.forward(potential_net, nu.points)[0][:, 0]
        return semidual_objective(g_all, a, b, C, config.epsilon)

    if trace is not None:
        trace.reset_clock()
        trace.record(0, full_objective())
    for t in range(1, config.inner_steps + 1):
        idx_s = np.sort(rng.integers(0, n_s, size=bs)) if bs < n_s else np.arange(n_s)
        idx_t = rng.choice(n_t, size=bt, replace=False) if bt < n_t else np.arange(n_t)
        b_batch = b[idx_t]
        b_sum = b_batch.sum()
        if b_sum <= 0:
            continue  # all sampled target atoms are massless
        b_batch = b_batch / b_sum
        g_out, cache = nnet.forward(potential_net, nu.points[idx_t])
        upstream = potential_output_grad(
            C[np.ix_(idx_s, idx_t)], g_out[:, 0], b_batch, m[idx_s], config.epsilon
        )
        grads = nnet.backward(potential_net, cache, upstream[:, None], need_input_grad=False)
        nnet.adam_step(potential_net, grads, adam, direction="maximize")
        if trace is not None and trace.wants(t):
            trace.record(t, full_objective())
    return potential_net, full_objective()


def recover_plan(v, mu, nu, C, epsilon: float) -> np.ndarray:
    """Primal plan induced by a potential: pi_ij = mu_i nu_j exp((u_i + v_j
    - C_ij)/eps) with u the smoothed c-transform of v. Rows sum to mu
    exactly by construction; column error measures how far v is from
    optimal."""
    if epsilon <= 0:
        raise ValueError("recover_plan requires epsilon > 0")
    a = as_weights(mu)
    b = as_weights(nu)
    C = check_cost_matrix(C, a.shape[0], b.shape[0])
    v = np.asarray(v, dtype=np.float64)
    plan = np.zeros_like(C)
    pos = a > 0
    chi = _chi_rows(C[pos], v, b, epsilon)
    plan[pos] = a[pos, None] * chi
    return plan
