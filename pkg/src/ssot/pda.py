"""Soft-masked, importance-weighted semi-dual OT training for partial
domain adaptation.

Pipeline: estimate class priors (source by counting, target by averaging
classifier predictions), form importance weights as prior ratios, reweigh
the source measure, mask the transport cost with a row-softmax of
prediction dissimilarities, and alternate between (a) ascending the
semi-dual OT objective over the potential network g and (b) descending the
weighted cross-entropy + OT + target-entropy objective over the feature
extractor f and classifier eta.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nnet, semidual
from .measures import LabeledMeasure, squared_euclidean_cost

ABLATIONS = ("none", "no-mask", "no-weights", "no-ent", "source-only")

_LOG_FLOOR = 1e-12

METRIC_COLUMNS = (
    "epoch",
    "loss_ce",
    "loss_ot",
    "loss_ent",
    "loss_total",
    "target_acc",
    "prior_l1_error",
    "seconds",
)


class DivergenceError(RuntimeError):
    """Raised when a training loss goes non-finite; carries a state snapshot."""

    def __init__(self, message: str, state: "SsotState"):
        super().__init__(message)
        self.state = state


def _check_prob_rows(pred, name: str) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {p.shape}")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError(f"{name} must be nonnegative and finite")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError(f"{name} rows must sum to 1")
    return p


def estimate_source_prior(labels, num_classes: int) -> np.ndarray:
    """Empirical class frequencies of the labeled source."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty label set")
    if (labels < 0).any() or (labels >= num_classes).any():
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.bincount(labels, minlength=num_classes) / labels.size


def estimate_target_prior(predictions) -> np.ndarray:
    """Target class prior estimated as the mean of prediction rows."""
    p = _check_prob_rows(predictions, "predictions")
    return p.mean(axis=0)


def importance_weights(target_prior, source_prior, floor: float = 1e-8) -> np.ndarray:
    """Per-class ratios target/source with a division floor.

    Classes absent from both priors get weight 0. Target mass on a class
    the source lacks violates the partial-adaptation assumption and is
    flagged with a warning (the ratio is still returned).
    """
    t = np.asarray(target_prior, dtype=np.float64)
    s = np.asarray(source_prior, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ValueError("priors must be 1-D vectors of equal length")
    missing = (s < floor) & (t >= floor)
    if missing.any():
        warnings.warn(
            f"target mass on classes absent from the source: {np.flatnonzero(missing).tolist()}",
            stacklevel=2,
        )
    w = t / np.maximum(s, floor)
    w[(s < floor) & (t < floor)] = 0.0
    return w


def normalize_importance(weights, source_labels) -> np.ndarray:
    """Rescale class weights so their per-atom mean over the source is 1,
    which keeps the reweighed empirical source measure a probability
    measure."""
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(source_labels, dtype=np.int64)
    mean = w[labels].mean()
    if mean <= 0:
        raise ValueError("importance weights give zero mass to every source atom")
    return w / mean


def soft_mask(pred_s, pred_t) -> np.ndarray:
    """Row-stochastic mask from prediction similarity.

    Entry (i, j) is the row softmax of 1 - <pred_s_i, pred_t_j>: pairs
    predicted dissimilar get the larger share, so after multiplying into
    the cost matrix, transport between predicted-same-class pairs is
    relatively cheap.
    """
    ps = _check_prob_rows(pred_s, "pred_s")
    pt = _check_prob_rows(pred_t, "pred_t")
    if ps.shape[1] != pt.shape[1]:
        raise ValueError("prediction matrices must share the class dimension")
    return nnet.softmax(1.0 - ps @ pt.T)


def masked_cost(mask, C) -> np.ndarray:
    """Hadamard product mask * C; dominates by C entrywise since mask <= 1."""
    S = np.asarray(mask, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if S.shape != C.shape:
        raise ValueError(f"mask shape {S.shape} != cost shape {C.shape}")
    if (S <= 0).any() or (S > 1).any() or np.abs(S.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("mask must be row-stochastic with entries in (0, 1]")
    return S * C


def weighted_ce_loss(pred_s, labels_s, importance) -> float:
    """Importance-weighted cross entropy, -mean_i m_{y_i} log p_i[y_i]."""
    p = _check_prob_rows(pred_s, "pred_s")
    labels = np.asarray(labels_s, dtype=np.int64)
    m = np.asarray(importance, dtype=np.float64)
    picked = np.maximum(p[np.arange(p.shape[0]), labels], _LOG_FLOOR)
    return float(-(m[labels] * np.log(picked)).mean())


def entropy_loss(pred_t) -> float:
    """Mean Shannon entropy of target predictions (0 log 0 = 0)."""
    p = _check_prob_rows(pred_t, "pred_t")
    plogp = np.where(p > 0, p * np.log(np.maximum(p, _LOG_FLOOR)), 0.0)
    return float(-plogp.sum(axis=1).mean())


def total_loss(ce: float, ot: float, ent: float, config: "SsotConfig") -> float:
    return ce + config.lambda_ot * ot + config.lambda_ent * ent


def ot_loss(
    features_s,
    labels_s,
    features_t,
    importance,
    potential_net: nnet.Mlp,
    config: "SsotConfig",
    mask=None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Semi-dual OT distance of the batch and its feature gradients.

    Evaluates W_eps between the importance-reweighed source batch and the
    target batch under the squared Euclidean cost, optionally Hadamard-
    masked. Returns (value, d/d features_s, d/d features_t); the mask and
    the potential network weights are treated as constants (gradients reach
    the features through the cost entries and through g's input), matching
    the fix-g phase of the alternating loop.
    """
    fs = np.asarray(features_s, dtype=np.float64)
    ft = np.asarray(features_t, dtype=np.float64)
    labels = np.asarray(labels_s, dtype=np.int64)
    eps = config.epsilon
    bs, bt = fs.shape[0], ft.shape[0]
    nu = np.full(bt, 1.0 / bt)

    m = np.asarray(importance, dtype=np.float64)[labels]
    mean_m = m.mean()
    if mean_m > 0:
        m = m / mean_m

    C = squared_euclidean_cost(fs, ft)
    Ct = masked_cost(mask, C) if mask is not None else C
    g_out, g_cache = nnet.forward(potential_net, ft)
    g = g_out[:, 0]

    logits = np.log(nu)[None, :] + (g[None, :] - Ct) / eps
    row_max = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - row_max)
    row_sum = expl.sum(axis=1, keepdims=True)
    chi = expl / row_sum
    u = -eps * (np.log(row_sum[:, 0]) + row_max[:, 0])
    value = float((m * u).mean() + nu @ g - eps)

    # d value / d Ct = (m_i / bs) * chi_ij; chain through the mask and the
    # squared Euclidean cost into both feature sets.
    plan = (m[:, None] / bs) * chi
    G = plan * mask if mask is not None else plan
    row_w = G.sum(axis=1)
    col_w = G.sum(axis=0)
    grad_fs = 2.0 * (row_w[:, None] * fs - G @ ft)
    grad_ft = 2.0 * (col_w[:, None] * ft - G.T @ fs)

    # d value / d g_j = nu_j - sum_i (m_i / bs) chi_ij, pushed through g's
    # input; the potential parameters themselves receive no update here.
    d_g = nu - plan.sum(axis=0)
    grad_ft += nnet.backward(potential_net, g_cache, d_g[:, None]).d_input
    return value, grad_fs, grad_ft


@dataclass(frozen=True)
class SsotConfig:
    """Hyper-parameters of the adaptation loop.

    The loss weights default to 1.0 and eps to 1, with batch sizes of 32 on
    both sides; the sensible search grid for the lambdas is roughly
    {1e-3, ..., 1e1} with the best region near {1e0, 1e1}.
    """

    lambda_ot: float = 1.0
    lambda_ent: float = 1.0
    epsilon: float = 1.0
    batch_source: int = 32
    batch_target: int = 32
    epochs: int = 40
    potential_steps: int = 1
    lr_model: float = 2e-3
    lr_potential: float = 2e-3
    pretrain_steps: int = 200
    prior_refresh: str = "iteration"  # "iteration" or "epoch"
    importance_floor: float = 1e-8
    hidden_dim: int = 64
    feature_dim: int = 32
    potential_hidden_dim: int = 32
    ablation: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ot < 0 or self.lambda_ent < 0:
            raise ValueError("loss weights must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if min(self.batch_source, self.batch_target) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.epochs < 1 or self.potential_steps < 1:
            raise ValueError("epochs and potential_steps must be >= 1")
        if self.prior_refresh not in ("iteration", "epoch"):
            raise ValueError("prior_refresh must be 'iteration' or 'epoch'")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")


@dataclass
class EpochMetrics:
    epoch: int
    loss_ce: float
    loss_ot: float
    loss_ent: float
    loss_total: float
    target_acc: float
    prior_l1_error: float
    seconds: float

    def row(self) -> tuple:
        return (
            self.epoch,
            self.loss_ce,
            self.loss_ot,
            self.loss_ent,
            self.loss_total,
            self.target_acc,
            self.prior_l1_error,
            self.seconds,
        )


@dataclass
class SsotState:
    """Everything the alternating loop owns: the three networks, their
    optimizer states, current weight estimates, and per-epoch metrics."""

    feature_net: nnet.Mlp
    classifier_net: nnet.Mlp
    potential_net: nnet.Mlp
    adam_feature: nnet.AdamState
    adam_classifier: nnet.AdamState
    adam_potential: nnet.AdamState
    importance: np.ndarray
    source_prior: np.ndarray
    target_prior_estimate: np.ndarray
    config: SsotConfig
    metrics: list[EpochMetrics] = field(default_factory=list)
    diverged: bool = False

    def predict_target(self, points) -> np.ndarray:
        feats = nnet.forward(self.feature_net, points)[0]
        return nnet.forward(self.classifier_net, feats)[0]

    def metric_rows(self) -> list[tuple]:
        return [m.row() for m in self.metrics]


def _model_forward(state: SsotState, points):
    feats, f_cache = nnet.forward(state.feature_net, points)
    preds, c_cache = nnet.forward(state.classifier_net, feats)
    return feats, f_cache, preds, c_cache


def _model_step(state: SsotState, f_cache, c_cache, d_logits, extra_feature_grad=None):
    """Backprop classifier + feature nets and apply one Adam step to each.

    `d_logits` is the loss gradient wrt classifier logits; an optional
    gradient arriving directly at the features (from the OT loss) is added
    before the feature net's backward pass.
    """
    c_grads = nnet.backward(state.classifier_net, c_cache, d_logits, upstream_wrt="logits")
    d_feats = c_grads.d_input
    if extra_feature_grad is not None:
        d_feats = d_feats + extra_feature_grad
    f_grads = nnet.backward(state.feature_net, f_cache, d_feats, need_input_grad=False)
    nnet.adam_step(state.classifier_net, c_grads, state.adam_classifier)
    nnet.adam_step(state.feature_net, f_grads, state.adam_feature)


def _refresh_importance(state: SsotState, target_points, source_labels):
    preds = state.predict_target(target_points)
    if not np.isfinite(preds).all():
        state.diverged = True
        raise DivergenceError("non-finite target predictions during prior refresh", state)
    state.target_prior_estimate = estimate_target_prior(preds)
    if state.config.ablation in ("no-weights", "source-only"):
        state.importance = np.ones_like(state.source_prior)
        return
    raw = importance_weights(
        state.target_prior_estimate, state.source_prior, state.config.importance_floor
    )
    state.importance = normalize_importance(raw, source_labels)


def _potential_phase(state: SsotState, feats_s, labels_s, feats_t, mask):
    """Ascend the semi-dual objective over g with f and eta frozen."""
    cfg = state.config
    m = state.importance[labels_s]
    nu = np.full(feats_t.shape[0], 1.0 / feats_t.shape[0])
    C = squared_euclidean_cost(feats_s, feats_t)
    Ct = masked_cost(mask, C) if mask is not None else C
    for _ in range(cfg.potential_steps):
        g_out, g_cache = nnet.forward(state.potential_net, feats_t)
        upstream = semidual.potential_output_grad(Ct, g_out[:, 0], nu, m, cfg.epsilon)
        grads = nnet.backward(state.potential_net, g_cache, upstream[:, None],
                              need_input_grad=False)
        nnet.adam_step(state.potential_net, grads, state.adam_potential, direction="maximize")


def train_ssot(
    source: LabeledMeasure,
    target_points,
    config: SsotConfig,
    eval_labels=None,
) -> SsotState:
    """Run the full alternating adaptation loop.

    Training reads only ``target_points``; ``eval_labels`` (e.g. a synthetic
    task's held-out labels) feed the target-accuracy and prior-error metric
    columns and are never seen by any gradient computation. Raises
    DivergenceError (with the state attached) if a loss goes non-finite.
    """
    xt = np.asarray(target_points, dtype=np.float64)
    xs = source.measure.points
    ys = source.labels
    K = source.num_classes
    n_s, n_t = xs.shape[0], xt.shape[0]
    cfg = config
    rng = np.random.default_rng(cfg.seed)

    feature_net = nnet.mlp_init(
        [xs.shape[1], cfg.hidden_dim, cfg.feature_dim], "identity",
        seed=int(rng.integers(2**31)),
    )
    classifier_net = nnet.mlp_init(
        [cfg.feature_dim, K], "softmax", seed=int(rng.integers(2**31))
    )
    potential_net = nnet.mlp_init(
        [cfg.feature_dim, cfg.potential_hidden_dim, 1], "identity",
        seed=int(rng.integers(2**31)), zero_final=True,
    )
    state = SsotState(
        feature_net=feature_net,
        classifier_net=classifier_net,
        potential_net=potential_net,
        adam_feature=nnet.adam_init(feature_net, alpha=cfg.lr_model),
        adam_classifier=nnet.adam_init(classifier_net, alpha=cfg.lr_model),
        adam_potential=nnet.adam_init(potential_net, alpha=cfg.lr_potential),
        importance=np.ones(K),
        source_prior=estimate_source_prior(ys, K),
        target_prior_estimate=np.full(K, 1.0 / K),
        config=cfg,
    )
    true_prior = None
    if eval_labels is not None:
        eval_labels = np.asarray(eval_labels, dtype=np.int64)
        true_prior = np.bincount(eval_labels, minlength=K) / eval_labels.size

    bs = min(cfg.batch_source, n_s)
    bt = min(cfg.batch_target, n_t)
    ones = np.ones(K)

    # Pre-training: plain source cross entropy on f and eta.
    for _ in range(cfg.pretrain_steps):
        idx = rng.integers(0, n_s, size=bs)
        _, f_cache, preds, c_cache = _model_forward(state, xs[idx])
        d_logits = _ce_logit_grad(preds, ys[idx], ones)
        _model_step(state, f_cache, c_cache, d_logits)

    source_only = cfg.ablation == "source-only"
    use_mask = cfg.ablation not in ("no-mask", "source-only")
    lambda_ent = 0.0 if cfg.ablation in ("no-ent", "source-only") else cfg.lambda_ent
    lambda_ot = 0.0 if source_only else cfg.lambda_ot

    iters_per_epoch = max(1, n_s // bs)
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm_s = rng.permutation(n_s)
        perm_t = rng.permutation(n_t)
        sums = {"ce": 0.0, "ot": 0.0, "ent": 0.0, "total": 0.0}
        if not source_only and cfg.prior_refresh == "epoch":
            _refresh_importance(state, xt, ys)
        for it in range(iters_per_epoch):
            idx_s = perm_s[it * bs : (it + 1) * bs]
            idx_t = perm_t[np.arange(it * bt, (it + 1) * bt) % n_t]
            xb_s, yb_s, xb_t = xs[idx_s], ys[idx_s], xt[idx_t]
            if not source_only and cfg.prior_refresh == "iteration":
                _refresh_importance(state, xt, ys)

            feats_s, fs_cache, preds_s, cs_cache = _model_forward(state, xb_s)
            ce = weighted_ce_loss(preds_s, yb_s, state.importance)
            d_logits_s = _ce_logit_grad(preds_s, yb_s, state.importance)
            ot = ent = 0.0
            grad_feats_s = None

            if source_only:
                _model_step(state, fs_cache, cs_cache, d_logits_s)
            else:
                feats_t, ft_cache, preds_t, ct_cache = _model_forward(state, xb_t)
                mask = soft_mask(preds_s, preds_t) if use_mask else None

                if lambda_ot > 0:
                    # Fix f and eta, ascend the OT potential...
                    _potential_phase(state, feats_s, yb_s, feats_t, mask)
                    # ...then fix g and take the OT value and feature grads.
                    ot, grad_fs, grad_ft = ot_loss(
                        feats_s, yb_s, feats_t, state.importance,
                        state.potential_net, cfg, mask,
                    )
                    grad_feats_s = lambda_ot * grad_fs

                ent = entropy_loss(preds_t)
                d_logits_t = lambda_ent * _entropy_logit_grad(preds_t)
                extra_t = lambda_ot * grad_ft if lambda_ot > 0 else None

                # One combined descent step on f and eta: backprop both
                # domain batches, sum the parameter gradients, then update.
                c_grads = nnet.backward(
                    state.classifier_net, cs_cache, d_logits_s, upstream_wrt="logits"
                )
                c_grads_t = nnet.backward(
                    state.classifier_net, ct_cache, d_logits_t, upstream_wrt="logits"
                )
                d_feats_s = c_grads.d_input
                if grad_feats_s is not None:
                    d_feats_s = d_feats_s + grad_feats_s
                d_feats_t = c_grads_t.d_input
                if extra_t is not None:
                    d_feats_t = d_feats_t + extra_t
                f_grads = nnet.backward(
                    state.feature_net, fs_cache, d_feats_s, need_input_grad=False
                )
                f_grads_t = nnet.backward(
                    state.feature_net, ft_cache, d_feats_t, need_input_grad=False
                )
                c_grads.add_(c_grads_t)
                f_grads.add_(f_grads_t)
                nnet.adam_step(state.classifier_net, c_grads, state.adam_classifier)
                nnet.adam_step(state.feature_net, f_grads, state.adam_feature)

            total = ce + lambda_ot * ot + lambda_ent * ent
            if not np.isfinite(total):
                state.diverged = True
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, iteration {it}", state
                )
            sums["ce"] += ce
            sums["ot"] += ot
            sums["ent"] += ent
            sums["total"] += total

        target_acc = np.nan
        prior_l1 = np.nan
        preds_full = state.predict_target(xt)
        state.target_prior_estimate = estimate_target_prior(preds_full)
        if eval_labels is not None:
            target_acc = float((preds_full.argmax(axis=1) == eval_labels).mean())
            prior_l1 = float(np.abs(state.target_prior_estimate - true_prior).sum())
        state.metrics.append(
            EpochMetrics(
                epoch=epoch,
                loss_ce=sums["ce"] / iters_per_epoch,
                loss_ot=sums["ot"] / iters_per_epoch,
                loss_ent=sums["ent"] / iters_per_epoch,
                loss_total=sums["total"] / iters_per_epoch,
                target_acc=target_acc,
                prior_l1_error=prior_l1,
                seconds=time.perf_counter() - t_start,
            )
        )
    return state


def _ce_logit_grad(preds: np.ndarray, labels: np.ndarray, importance: np.ndarray) -> np.ndarray:
    """Gradient of the weighted CE wrt classifier logits: m (pred - onehot)/b.

    Uses the softmax+cross-entropy identity instead of differentiating
    through log(pred), which stays finite for saturated predictions.
    """
    b, K = preds.shape
    onehot = np.zeros((b, K))
    onehot[np.arange(b), labels] = 1.0
    return importance[labels][:, None] * (preds - onehot) / b


def _entropy_logit_grad(preds: np.ndarray) -> np.ndarray:
    """Gradient of the mean prediction entropy wrt classifier logits."""
    b = preds.shape[0]
    logp = np.log(np.maximum(preds, _LOG_FLOOR))
    row_ent = -(preds * logp).sum(axis=1, keepdims=True)
    return -preds * (logp + row_ent) / b
