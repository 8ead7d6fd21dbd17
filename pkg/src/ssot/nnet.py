"""Minimal multilayer perceptron with explicit forward/backward and Adam.

Affine layers with ReLU between them and an identity or softmax head; row
convention is (batch, features), so a layer computes ``x @ W + b`` with W of
shape (fan_in, fan_out). Gradients are exact reverse-mode derivatives of
that graph, checked against central finite differences in the test suite.
Deliberately small: enough to serve as feature extractor, classifier, and
scalar potential at desk scale, nothing more.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio

ACTIVATIONS = ("identity", "softmax")


@dataclass
class Mlp:
    """Layered affine/ReLU network. Mutated in place by adam_step; the
    version counter invalidates forward caches taken before an update."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"
    seed: int | None = None
    _version: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ForwardCache:
    """Activations captured by forward() for a later backward() call."""

    inputs: list[np.ndarray]  # input to each affine layer
    preacts: list[np.ndarray]  # affine outputs before ReLU / head activation
    output: np.ndarray
    version: int


@dataclass
class Gradients:
    """Per-parameter gradients mirroring an Mlp, plus the input gradient."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray | None = None

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [factor * g for g in self.d_weights],
            [factor * g for g in self.d_biases],
            None if self.d_input is None else factor * self.d_input,
        )

    def add_(self, other: "Gradients"):
        for g, o in zip(self.d_weights, other.d_weights):
            g += o
        for g, o in zip(self.d_biases, other.d_biases):
            g += o
        return self


@dataclass
class AdamState:
    """Adam moment estimates; shapes mirror the owning network."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = 0


def mlp_init(
    layer_dims: list[int],
    output_activation: str = "identity",
    seed: int | None = None,
    zero_final: bool = False,
) -> Mlp:
    """Kaiming-style uniform fan-in initialization; biases start at zero.

    ``zero_final`` zeroes the last layer so the network is the constant 0
    function at start (used by the potential network so ascent begins at
    the v = 0 vector).
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    if any(d < 1 for d in layer_dims):
        raise ValueError("layer dims must be positive")
    if output_activation not in ACTIVATIONS:
        raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if zero_final:
        weights[-1][:] = 0.0
    return Mlp(list(layer_dims), weights, biases, output_activation, seed)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a (batch, d_in) matrix; returns output and cache."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ValueError(
            f"batch must be 2-D with {net.layer_dims[0]} columns, got shape {x.shape}"
        )
    inputs, preacts = [], []
    h = x
    last = net.n_layers - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W + b
        preacts.append(z)
        h = z if l == last else np.maximum(z, 0.0)
    out = softmax(h) if net.output_activation == "softmax" else h
    return out, ForwardCache(inputs, preacts, out, net._version)


def backward(
    net: Mlp,
    cache: ForwardCache,
    upstream: np.ndarray,
    upstream_wrt: str = "output",
    need_input_grad: bool = True,
) -> Gradients:
    """Reverse-mode gradients for the given upstream derivative.

    ``upstream_wrt="output"`` interprets `upstream` as dL/d(output) and
    applies the softmax Jacobian when the head is softmax;
    ``upstream_wrt="logits"`` skips the head, for losses that fold the
    softmax derivative in analytically (e.g. cross-entropy's pred - onehot).
    """
    if cache.version != net._version:
        raise ValueError("stale forward cache: network was updated after forward()")
    if upstream_wrt not in ("output", "logits"):
        raise ValueError("upstream_wrt must be 'output' or 'logits'")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache.output.shape}")
    if net.output_activation == "softmax" and upstream_wrt == "output":
        p = cache.output
        g = p * (g - (g * p).sum(axis=1, keepdims=True))
    d_weights = [np.empty(0)] * net.n_layers
    d_biases = [np.empty(0)] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        if l != net.n_layers - 1:
            g = g * (cache.preacts[l] > 0)  # ReLU mask
        d_weights[l] = cache.inputs[l].T @ g
        d_biases[l] = g.sum(axis=0)
        if l > 0 or need_input_grad:
            g = g @ net.weights[l].T
    return Gradients(d_weights, d_biases, g if need_input_grad else None)


def adam_init(net: Mlp, alpha: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(W) for W in net.weights],
        v_weights=[np.zeros_like(W) for W in net.weights],
        m_biases=[np.zeros_like(b) for b in net.biases],
        v_biases=[np.zeros_like(b) for b in net.biases],
        alpha=alpha, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(
    net: Mlp, grads: Gradients, state: AdamState, direction: str = "minimize"
) -> bool:
    """One Adam update in place; ``direction="maximize"`` ascends.

    Non-finite gradients skip the update (flagged via ``state.skipped``)
    instead of poisoning the parameters. Returns True if applied.
    """
    if direction not in ("minimize", "maximize"):
        raise ValueError("direction must be 'minimize' or 'maximize'")
    if len(grads.d_weights) != net.n_layers or any(
        gW.shape != W.shape for gW, W in zip(grads.d_weights, net.weights)
    ) or any(gb.shape != b.shape for gb, b in zip(grads.d_biases, net.biases)):
        raise ValueError("gradient shapes do not match the network")
    finite = all(np.isfinite(g).all() for g in grads.d_weights) and all(
        np.isfinite(g).all() for g in grads.d_biases
    )
    if not finite:
        state.skipped += 1
        net._version += 1
        return False
    sign = -1.0 if direction == "maximize" else 1.0
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    params = net.weights + net.biases
    grad_list = [sign * g for g in grads.d_weights] + [sign * g for g in grads.d_biases]
    moments1 = state.m_weights + state.m_biases
    moments2 = state.v_weights + state.v_biases
    for p, g, m, v in zip(params, grad_list, moments1, moments2):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    net._version += 1
    return True


def clone(net: Mlp) -> Mlp:
    """Deep copy of the network parameters."""
    return Mlp(
        list(net.layer_dims),
        [W.copy() for W in net.weights],
        [b.copy() for b in net.biases],
        net.output_activation,
        net.seed,
        net._version,
    )


def save_mlp(net: Mlp, path) -> None:
    """Write `<path>.json` (manifest) and `<path>.ssotmat` (parameters).

    The manifest lists layer dims, activation tags and the init seed; the
    parameter file holds W0, b0, W1, b1, ... as consecutive binary records
    (biases stored as single-row matrices).
    """
    path = Path(path)
    arrays = []
    for W, b in zip(net.weights, net.biases):
        arrays.append(W)
        arrays.append(b[None, :])
    fileio.save_matrices(path.with_suffix(".ssotmat"), arrays)
    manifest = {
        "layer_dims": list(net.layer_dims),
        "hidden_activation": "relu",
        "output_activation": net.output_activation,
        "seed": net.seed,
        "params_file": path.with_suffix(".ssotmat").name,
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_mlp(path) -> Mlp:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    arrays = fileio.load_matrices(path.with_suffix(".ssotmat"))
    dims = manifest["layer_dims"]
    n_layers = len(dims) - 1
    if len(arrays) != 2 * n_layers:
        raise ValueError(
            f"expected {2 * n_layers} parameter records, found {len(arrays)}"
        )
    weights = [arrays[2 * l] for l in range(n_layers)]
    biases = [arrays[2 * l + 1][0] for l in range(n_layers)]
    net = Mlp(list(dims), weights, biases, manifest["output_activation"], manifest["seed"])
    for W, (fan_in, fan_out) in zip(weights, zip(dims[:-1], dims[1:])):
        if W.shape != (fan_in, fan_out):
            raise ValueError(f"parameter shape {W.shape} != manifest dims {(fan_in, fan_out)}")
    return net
