"""Entropic optimal transport (primal, semi-dual, network-parameterized)
plus soft-masked, importance-weighted OT training for partial domain
adaptation."""

from .measures import (
    DiscreteMeasure,
    LabeledMeasure,
    reweigh_by_class,
    squared_euclidean_cost,
    uniform_measure,
)
from .exact import ExactSolution, exact_ot_general, exact_ot_uniform_square
from .sinkhorn import SinkhornResult, plan_marginal_error, sinkhorn_solve
from .semidual import (
    SemidualConfig,
    TraceRecorder,
    recover_plan,
    semidual_grad,
    semidual_objective,
    smoothed_ctransform,
    solve_network,
    solve_vector_sag,
    solve_vector_sgd,
)
from .nnet import AdamState, Gradients, Mlp, adam_init, adam_step, backward, forward, mlp_init
from .pda import (
    DivergenceError,
    SsotConfig,
    SsotState,
    entropy_loss,
    estimate_source_prior,
    estimate_target_prior,
    importance_weights,
    masked_cost,
    normalize_importance,
    ot_loss,
    soft_mask,
    total_loss,
    train_ssot,
    weighted_ce_loss,
)
from .datagen import PdaTask, SynthConfig, generate

__version__ = "0.1.0"
