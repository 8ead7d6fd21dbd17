"""Discrete measures over feature points and pairwise transport costs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Weight sums further than this from 1 are rejected as logic errors;
# smaller deviations are silently renormalized (float drift).
WEIGHT_SUM_REJECT = 1e-6
WEIGHT_SUM_TOL = 1e-9

# Above this many cost entries the expanded |x|^2+|z|^2-2<x,z> form is used.
_EXPANDED_FORM_CUTOFF = 10_000


def _as_2d_float(points, name: str) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite entries")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud: `points` (n, d) with probability `weights` (n,).

    Weights must be nonnegative and sum to 1; sums within ``WEIGHT_SUM_REJECT``
    of 1 are renormalized, anything further off is rejected. Arrays are frozen
    after construction, so instances are safe to share between threads.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_2d_float(self.points, "points")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise ValueError(
                f"weights must be 1-D with length {pts.shape[0]}, got shape {w.shape}"
            )
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_REJECT:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            w = w / total
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class LabeledMeasure:
    """A DiscreteMeasure whose atoms carry class ids in ``[0, num_classes)``."""

    measure: DiscreteMeasure
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.array_equal(labels, labels.astype(np.int64)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.ndim != 1 or labels.shape[0] != self.measure.n_atoms:
            raise ValueError(
                f"labels must be 1-D with length {self.measure.n_atoms}, "
                f"got shape {labels.shape}"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if (labels < 0).any() or (labels >= self.num_classes).any():
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_atoms(self) -> int:
        return self.measure.n_atoms


def as_weights(measure_or_weights) -> np.ndarray:
    """Accept a DiscreteMeasure or a bare probability vector; return weights."""
    if isinstance(measure_or_weights, DiscreteMeasure):
        return measure_or_weights.weights
    w = np.asarray(measure_or_weights, dtype=np.float64)
    if w.ndim != 1 or not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be a nonnegative finite 1-D vector")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_REJECT:
        raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
    return w


def check_cost_matrix(C, n_source: int | None = None, n_target: int | None = None) -> np.ndarray:
    """Validate a pairwise cost matrix: 2-D, finite, nonnegative."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {C.shape}")
    if not np.isfinite(C).all():
        raise ValueError("cost matrix contains non-finite entries")
    if (C < 0).any():
        raise ValueError("cost matrix contains negative entries")
    if n_source is not None and C.shape[0] != n_source:
        raise ValueError(f"cost matrix has {C.shape[0]} rows, expected {n_source}")
    if n_target is not None and C.shape[1] != n_target:
        raise ValueError(f"cost matrix has {C.shape[1]} columns, expected {n_target}")
    return C


def squared_euclidean_cost(source_points, target_points) -> np.ndarray:
    """Pairwise squared Euclidean cost, ``C[i, j] = ||x_i - z_j||^2``.

    Uses the direct difference formula at small sizes; switches to the
    expanded form (with a clamp of negative round-off to 0) once the
    output exceeds ``_EXPANDED_FORM_CUTOFF`` entries.
    """
    xs = _as_2d_float(source_points, "source_points")
    zs = _as_2d_float(target_points, "target_points")
    if xs.shape[1] != zs.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: source d={xs.shape[1]}, target d={zs.shape[1]}"
        )
    if xs.shape[0] * zs.shape[0] > _EXPANDED_FORM_CUTOFF:
        sq_x = np.einsum("id,id->i", xs, xs)
        sq_z = np.einsum("jd,jd->j", zs, zs)
        C = sq_x[:, None] + sq_z[None, :] - 2.0 * (xs @ zs.T)
        np.maximum(C, 0.0, out=C)
    else:
        diff = xs[:, None, :] - zs[None, :, :]
        C = np.einsum("ijd,ijd->ij", diff, diff)
    return C


def uniform_measure(points) -> DiscreteMeasure:
    """Measure with equal mass 1/n on each of the given points."""
    pts = _as_2d_float(points, "points")
    n = pts.shape[0]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def reweigh_by_class(src: LabeledMeasure, importance) -> DiscreteMeasure:
    """Rescale each atom's weight by its class importance and renormalize.

    The new weight of atom i is proportional to ``importance[labels[i]] *
    weights[i]``. All-equal importance therefore returns the input weights
    unchanged. Raises if every atom lands on a zero-importance class.
    """
    imp = np.asarray(importance, dtype=np.float64)
    if imp.ndim != 1 or imp.shape[0] != src.num_classes:
        raise ValueError(
            f"importance must have one entry per class ({src.num_classes}), "
            f"got shape {imp.shape}"
        )
    if not np.isfinite(imp).all() or (imp < 0).any():
        raise ValueError("importance must be finite and nonnegative")
    w = src.measure.weights * imp[src.labels]
    total = w.sum()
    if total <= 0.0:
        raise ValueError("degenerate reweighting: all mass removed")
    return DiscreteMeasure(src.measure.points, w / total)
