"""Small ReLU multilayer perceptron with hand-written backward passes.

The same class serves as the standard model and the adversarial model. The
output of the last hidden layer (after the rectifier) is exposed as the
feature representation; the linear output layer produces the logits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import NumericalError

CHECKPOINT_MAGIC = b"TOPOCKPT"
CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    pass


class CheckpointError(IOError):
    pass


@dataclass
class Mlp:
    """Parameters of a rectifier MLP.

    ``weights[l]`` has shape ``(dims[l], dims[l+1])`` and ``biases[l]`` has
    shape ``(dims[l+1],)``.
    """

    dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def feature_dim(self) -> int:
        return self.dims[-2]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def with_flat(self, flat: np.ndarray) -> "Mlp":
        """New model with parameters read from a flat vector (layout of :meth:`flat`)."""
        flat = np.asarray(flat, dtype=np.float64)
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            bs.append(flat[pos:pos + b.size].copy())
            pos += b.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return Mlp(self.dims, ws, bs)


@dataclass
class ForwardOutput:
    features: np.ndarray
    logits: np.ndarray
    # pre-activations and activations for the backward pass
    _inputs: list[np.ndarray] = field(default_factory=list, repr=False)
    _preacts: list[np.ndarray] = field(default_factory=list, repr=False)


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ConfigurationError(
            f"layer dims {dims} need an input, at least one hidden layer and an output"
        )
    if any(d < 1 for d in dims):
        raise ConfigurationError(f"layer dims must be positive, got {dims}")
    return dims


def init_mlp(dims: Sequence[int], rng: np.random.Generator) -> Mlp:
    """He-initialised weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    dims = _check_dims(dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases)


def forward(model: Mlp, X: np.ndarray) -> ForwardOutput:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ValueError(f"input shape {X.shape} does not match input dim {model.dims[0]}")
    inputs, preacts = [], []
    h = X
    n_layers = len(model.weights)
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if layer < n_layers - 1 else z
    return ForwardOutput(features=inputs[-1], logits=h, _inputs=inputs, _preacts=preacts)


def backward(
    model: Mlp,
    out: ForwardOutput,
    grad_features: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate output gradients; returns (parameter grads, input grad).

    Parameter grads follow :meth:`Mlp.params` order.
    """
    n = out.logits.shape[0]
    g = np.zeros_like(out.logits) if grad_logits is None else np.asarray(grad_logits, dtype=np.float64)
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))  # type: ignore[list-item]
    for layer in range(len(model.weights) - 1, -1, -1):
        h_in = out._inputs[layer]
        grads[2 * layer] = h_in.T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        g = g @ model.weights[layer].T
        if layer == len(model.weights) - 1 and grad_features is not None:
            g = g + grad_features
        if layer > 0:
            g = g * (out._preacts[layer - 1] > 0)
    assert g.shape[0] == n
    return grads, g


LossFn = Callable[[ForwardOutput], tuple]
"""A loss over a forward pass returns ``(value, grad_features, grad_logits)``;
either gradient may be ``None`` when the loss does not depend on it."""


def _run_loss(model: Mlp, X: np.ndarray, loss_fn: LossFn):
    out = forward(model, X)
    value, g_feat, g_logit = loss_fn(out)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value}")
    grads, g_x = backward(model, out, g_feat, g_logit)
    return float(value), grads, g_x


def grad_params(model: Mlp, X: np.ndarray, loss_fn: LossFn) -> tuple[float, list[np.ndarray]]:
    value, grads, _ = _run_loss(model, X, loss_fn)
    return value, grads


def grad_input(model: Mlp, X: np.ndarray, loss_fn: LossFn) -> tuple[float, np.ndarray]:
    value, _, g_x = _run_loss(model, X, loss_fn)
    return value, g_x


class Sgd:
    """SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics)."""

    def __init__(self, model: Mlp, lr: float, momentum: float = 0.9, weight_decay: float = 2e-4):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf = [np.zeros_like(p) for p in model.params()]

    def step(self, model: Mlp, grads: list[np.ndarray]) -> None:
        for p, g, buf in zip(model.params(), grads, self._buf):
            d = g + self.weight_decay * p if self.weight_decay else g
            if self.momentum:
                buf *= self.momentum
                buf += d
                d = buf
            p -= self.lr * d


# Checkpoint layout (all little-endian):
#   8s  magic "TOPOCKPT"
#   u32 version, u32 number of dims
#   u64 * ndims layer dims
#   i64 seed, i64 epoch
#   f64 * P parameters: W0 (row-major), b0, W1, b1, ...

def save_checkpoint(path, model: Mlp, seed: int = 0, epoch: int = 0) -> None:
    header = struct.pack("<8sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(model.dims))
    header += struct.pack(f"<{len(model.dims)}Q", *model.dims)
    header += struct.pack("<qq", seed, epoch)
    body = model.flat().astype("<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_checkpoint(path) -> tuple[Mlp, int, int]:
    """Read a checkpoint; returns ``(model, seed, epoch)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 16 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    version, ndims = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    try:
        dims = struct.unpack_from(f"<{ndims}Q", data, pos)
        pos += 8 * ndims
        seed, epoch = struct.unpack_from("<qq", data, pos)
        pos += 16
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    try:
        dims = _check_dims(dims)
    except ConfigurationError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(data) - pos != 8 * n_params:
        raise CheckpointError(f"{path}: expected {n_params} parameters")
    flat = np.frombuffer(data, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    shell = Mlp(dims, [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                [np.zeros(b) for b in dims[1:]])
    return shell.with_flat(flat), seed, epoch
