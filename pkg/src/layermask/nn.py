"""Plaintext MLP primitives: dense layers, ReLU, softmax cross-entropy, SGD.

Weights follow the ``(n_out, n_in)`` convention, so a layer computes
``x @ W.T + b``. All arithmetic is float64.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

BOTTOM = "bottom"
TOP = "top"
SHADOW = "shadow"
HEAD = "head"
ROLES = (BOTTOM, TOP, SHADOW, HEAD)

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class MaskedLayerError(RuntimeError):
    """A secret-shared layer reached a plaintext-only code path."""


@dataclass
class Linear:
    weight: np.ndarray
    bias: np.ndarray
    masked: bool = False

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"inconsistent layer shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "Linear":
        return Linear(self.weight.copy(), self.bias.copy(), self.masked)


@dataclass
class MLP:
    layers: list[Linear]
    role: str = BOTTOM
    activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        for i, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:]), start=1):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer {i} outputs {prev.n_out} but layer {i + 1} takes {nxt.n_in}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def masked_indices(self) -> set[int]:
        """1-based indices of secret-shared layers."""
        return {j for j, layer in enumerate(self.layers, start=1) if layer.masked}

    def copy(self) -> "MLP":
        return MLP([layer.copy() for layer in self.layers], self.role, self.activation)

    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)


def init_linear(n_in: int, n_out: int, rng: np.random.Generator) -> Linear:
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out)
    return Linear(w, b)


def init_mlp(dims, rng: np.random.Generator, role: str = BOTTOM) -> MLP:
    """Uniform ``+-1/sqrt(fan_in)`` init; ReLU between consecutive layers."""
    dims = list(dims)
    if len(dims) < 2:
        raise ShapeError("dims needs an input and at least one output width")
    return MLP([init_linear(a, b, rng) for a, b in zip(dims, dims[1:])], role)


# ---------------------------------------------------------------------------
# layer ops


def fc_forward(layer: Linear, x: np.ndarray) -> np.ndarray:
    if layer.masked:
        raise MaskedLayerError("masked layer passed to the plaintext forward path")
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(f"input of shape {x.shape} does not match layer input width {layer.n_in}")
    return x @ layer.weight.T + layer.bias


def fc_backward(layer: Linear, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_w, grad_bias, grad_in)``."""
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(f"input of shape {x.shape} does not match layer input width {layer.n_in}")
    if grad_out.shape != (x.shape[0], layer.n_out):
        raise ShapeError(f"grad_out of shape {grad_out.shape}, expected {(x.shape[0], layer.n_out)}")
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    grad_in = grad_out @ layer.weight
    return grad_w, grad_b, grad_in


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at 0 is 0
    return np.where(x > 0, grad_out, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels of shape {labels.shape} for {n} logits rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# model ops


def model_forward(model: MLP, x: np.ndarray):
    """Forward pass; ``cache`` holds each layer's input and pre-activation."""
    cache = []
    h = x
    last = model.n_layers - 1
    for j, layer in enumerate(model.layers):
        out = fc_forward(layer, h)
        cache.append((h, out))
        h = relu(out) if j < last and model.activation == "relu" else out
    return h, cache


def model_backward(model: MLP, cache, grad_out: np.ndarray):
    """Return per-layer ``(grad_w, grad_b)`` and the gradient w.r.t. the input."""
    grads = [None] * model.n_layers
    g = grad_out
    last = model.n_layers - 1
    for j in range(last, -1, -1):
        x, pre = cache[j]
        if j < last and model.activation == "relu":
            g = relu_backward(pre, g)
        gw, gb, g = fc_backward(model.layers[j], x, g)
        grads[j] = (gw, gb)
    return grads, g


def sgd_update(layer: Linear, grad_w: np.ndarray, grad_b: np.ndarray, lr: float) -> None:
    if grad_w.shape != layer.weight.shape or grad_b.shape != layer.bias.shape:
        raise ShapeError("gradient shapes do not match the layer")
    if layer.masked:
        raise MaskedLayerError("masked layers are updated on shares, not by sgd_step")
    layer.weight = layer.weight - lr * grad_w
    layer.bias = layer.bias - lr * grad_b


def sgd_step(model: MLP, grads, lr: float) -> MLP:
    """In-place SGD on every plaintext layer; returns the model for chaining."""
    if len(grads) != model.n_layers:
        raise ShapeError(f"{len(grads)} gradients for {model.n_layers} layers")
    for layer, (gw, gb) in zip(model.layers, grads):
        if layer.masked:
            continue
        sgd_update(layer, gw, gb, lr)
    return model


def predict(model: MLP, x: np.ndarray) -> np.ndarray:
    return model_forward(model, x)[0]


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    # non-finite logits come from diverged attack models; they never win argmax
    safe = np.where(np.isfinite(logits), logits, -np.inf)
    return float(np.mean(np.argmax(safe, axis=1) == labels))


def l1_norms(grads) -> np.ndarray:
    return np.array([np.abs(gw).sum() + np.abs(gb).sum() for gw, gb in grads])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: MLP, meta: dict | None = None) -> None:
    """Write an ``.npz`` holding the raw arrays plus a JSON header.

    Arrays are stored with their own dtype (``uint64`` for ring shares), so
    the round-trip is bit-exact.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "role": model.role,
        "activation": model.activation,
        "masked": [layer.masked for layer in model.layers],
        "meta": meta or {},
    }
    arrays = {}
    for j, layer in enumerate(model.layers):
        arrays[f"w{j}"] = layer.weight
        arrays[f"b{j}"] = layer.bias
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(z["header"].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        layers = [
            Linear(z[f"w{j}"].copy(), z[f"b{j}"].copy(), bool(m))
            for j, m in enumerate(header["masked"])
        ]
    return MLP(layers, header["role"], header["activation"]), header["meta"]

