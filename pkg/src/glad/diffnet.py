"""Minimal differentiable MLP core: dense layers, softmax losses, gradient
reversal, and momentum SGD, all with hand-coded gradients.

Everything operates on plain numpy arrays. Parameters for an MLP are stored
as a flat list [W0, b0, W1, b1, ...] with W of shape (d_in, d_out).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

_ACTIVATIONS = ("relu", "tanh")
_OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


class ShapeError(ValueError):
    """Input or parameter shapes do not match the MLP spec."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was aborted."""


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


def init_mlp(spec: MlpSpec, rng: np.random.Generator, scale: float | None = None):
    """He-style initialization; biases start at zero."""
    params = []
    for d_in, d_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        s = scale if scale is not None else np.sqrt(2.0 / d_in)
        params.append(rng.normal(0.0, s, size=(d_in, d_out)))
        params.append(np.zeros(d_out))
    return params


def _check_params(spec: MlpSpec, params) -> None:
    if len(params) != 2 * spec.n_layers:
        raise ShapeError(
            f"expected {2 * spec.n_layers} parameter tensors, got {len(params)}"
        )
    for i, (d_in, d_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        if params[2 * i].shape != (d_in, d_out):
            raise ShapeError(f"layer {i}: weight shape {params[2 * i].shape} != {(d_in, d_out)}")
        if params[2 * i + 1].shape != (d_out,):
            raise ShapeError(f"layer {i}: bias shape {params[2 * i + 1].shape} != {(d_out,)}")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z  # identity


def mlp_forward(spec: MlpSpec, params, x: np.ndarray):
    """Forward pass. Accepts a single vector or a (n, d_in) batch.

    Returns (output, cache); the cache holds per-layer inputs and outputs
    for the backward pass.
    """
    _check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.layer_widths[0]:
        raise ShapeError(f"input width {x.shape[1]} != {spec.layer_widths[0]}")
    inputs = []
    outputs = []
    h = x
    for i in range(spec.n_layers):
        inputs.append(h)
        z = h @ params[2 * i] + params[2 * i + 1]
        act = spec.hidden_activation if i < spec.n_layers - 1 else spec.output_activation
        h = _activate(act, z)
        outputs.append(h)
    cache = {"inputs": inputs, "outputs": outputs, "squeeze": squeeze}
    return (h[0] if squeeze else h), cache


def mlp_apply(spec: MlpSpec, params, x: np.ndarray) -> np.ndarray:
    return mlp_forward(spec, params, x)[0]


def mlp_backward(spec: MlpSpec, params, cache, upstream: np.ndarray):
    """Backprop an upstream gradient through the cached forward pass.

    Returns (param_grads, input_grad) with the same shapes as params/input.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if cache["squeeze"]:
        up = up[None, :]
    if up.shape != cache["outputs"][-1].shape:
        raise ShapeError(f"upstream shape {up.shape} != output {cache['outputs'][-1].shape}")
    grads: list = [None] * (2 * spec.n_layers)
    g = up
    for i in reversed(range(spec.n_layers)):
        act = spec.hidden_activation if i < spec.n_layers - 1 else spec.output_activation
        out = cache["outputs"][i]
        if act == "relu":
            g = g * (out > 0.0)
        elif act == "tanh":
            g = g * (1.0 - out * out)
        elif act == "sigmoid":
            g = g * out * (1.0 - out)
        h = cache["inputs"][i]
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params[2 * i].T
    return grads, (g[0] if cache["squeeze"] else g)


def mlp_gradients(spec: MlpSpec, params, x: np.ndarray, upstream: np.ndarray):
    _, cache = mlp_forward(spec, params, x)
    return mlp_backward(spec, params, cache, upstream)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target: int):
    """Loss and gradient w.r.t. the logits for a single class target.

    grad = softmax(logits) - onehot(target), so its components sum to zero.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ShapeError("empty logits")
    if not 0 <= target < logits.shape[-1]:
        raise IndexError(f"target {target} out of range for {logits.shape[-1]} classes")
    p = softmax(logits)
    z = logits - np.max(logits)
    loss = float(np.log(np.exp(z).sum()) - z[target])
    grad = p.copy()
    grad[target] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits: np.ndarray, targets: np.ndarray):
    """Per-sample losses and logit gradients for a (B, K) batch."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = lse - z[rows, targets]
    grads = softmax(logits)
    grads[rows, targets] -= 1.0
    return losses, grads


def grl_backward(upstream: np.ndarray, coefficient: float) -> np.ndarray:
    """Gradient reversal: identity forward, -coefficient * upstream backward."""
    if not np.isfinite(coefficient):
        raise ValueError("GRL coefficient must be finite")
    return -coefficient * np.asarray(upstream)


@dataclass
class SgdState:
    velocity: list
    momentum: float
    weight_decay: float
    learning_rate: float
    decay_flags: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def init_sgd_state(params, learning_rate: float, momentum: float = 0.9,
                   weight_decay: float = 0.0) -> SgdState:
    # Weight decay is applied to weight matrices only, never to biases.
    return SgdState(
        velocity=[np.zeros_like(p) for p in params],
        momentum=momentum,
        weight_decay=weight_decay,
        learning_rate=learning_rate,
        decay_flags=[p.ndim > 1 for p in params],
    )


def sgd_step(params, grads, state: SgdState):
    """Heavy-ball update: v' = mu*v + (g + wd*p); p' = p - lr*v'."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError("params/grads/velocity length mismatch")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in tensor {i}")
    new_params = []
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        eff = g + state.weight_decay * p if state.decay_flags[i] else g
        v_new = state.momentum * v + eff
        state.velocity[i] = v_new
        new_params.append(p - state.learning_rate * v_new)
    return new_params, state


def finite_difference_check(loss_fn, params, grads, eps: float = 1e-5) -> float:
    """Max relative error between analytic grads and central differences.

    loss_fn(params) must be deterministic and scalar-valued; relative error
    uses |analytic - numeric| / max(1, |analytic|) per scalar parameter.
    """
    worst = 0.0
    for t, (p, g) in enumerate(zip(params, grads)):
        flat = p.ravel()
        gflat = np.asarray(g).ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_fn(params)
            flat[j] = orig - eps
            lm = loss_fn(params)
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * eps)
            err = abs(gflat[j] - numeric) / max(1.0, abs(gflat[j]))
            worst = max(worst, err)
    return worst


def save_params(directory: str, named_params) -> None:
    """Checkpoint: params.json (ordered names/shapes) + params.bin (LE f32)."""
    os.makedirs(directory, exist_ok=True)
    meta = [{"name": name, "shape": list(np.asarray(p).shape)} for name, p in named_params]
    with open(os.path.join(directory, "params.json"), "w") as f:
        json.dump(meta, f, indent=1)
    with open(os.path.join(directory, "params.bin"), "wb") as f:
        for _, p in named_params:
            f.write(np.asarray(p, dtype="<f4").tobytes())


def load_params(directory: str):
    """Inverse of save_params; returns a list of (name, float64 array)."""
    with open(os.path.join(directory, "params.json")) as f:
        meta = json.load(f)
    out = []
    with open(os.path.join(directory, "params.bin"), "rb") as f:
        raw = f.read()
    offset = 0
    for entry in meta:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = raw[offset:offset + 4 * n]
        if len(chunk) < 4 * n:
            raise IOError("truncated params.bin")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        out.append((entry["name"], arr))
        offset += 4 * n
    return out
