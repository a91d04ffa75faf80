"""L-infinity attacks: FGSM and PGD-K with pluggable inner objectives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import cross_entropy, kl_divergence
from .model import Mlp, backward, forward
from .numerics import NumericalError, make_rng

OBJECTIVES = ("cross_entropy", "kl_to_natural", "margin")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.031
    step_size: float = 0.007
    iterations: int = 10
    random_start: bool = True
    objective: str = "cross_entropy"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.iterations > 0 and not self.step_size > 0:
            raise ValueError("step_size must be positive when iterations > 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown attack objective {self.objective!r}")

    @property
    def label(self) -> str:
        """Short name for reports; the margin objective is a C&W-style surrogate."""
        if self.objective == "margin":
            return f"margin-PGD-{self.iterations} (C&W surrogate)"
        return f"PGD-{self.iterations}"


def margin_objective(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``max_{c != y} logit_c - logit_y`` and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n, C = logits.shape
    if C < 2:
        raise ValueError("margin objective needs at least two classes")
    y = np.asarray(y, dtype=np.intp)
    rows = np.arange(n)
    others = logits.copy()
    others[rows, y] = -np.inf
    runner_up = np.argmax(others, axis=1)
    value = (logits[rows, runner_up] - logits[rows, y]).mean()
    grad = np.zeros_like(logits)
    grad[rows, runner_up] += 1.0 / n
    grad[rows, y] -= 1.0 / n
    return float(value), grad


def _objective_and_grad(model: Mlp, X, y, objective: str, natural_logits):
    out = forward(model, X)
    if objective == "cross_entropy":
        value, g = cross_entropy(out.logits, y)
    elif objective == "margin":
        value, g = margin_objective(out.logits, y)
    else:
        if natural_logits is None:
            raise ValueError("kl_to_natural objective needs the natural logits")
        value, _, g = kl_divergence(natural_logits, out.logits)
    _, g_x = backward(model, out, None, g)
    return value, g_x


def _check_batch(model: Mlp, X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ValueError(f"input shape {X.shape} does not match model input dim {model.dims[0]}")
    if y is not None and len(y) != X.shape[0]:
        raise ValueError("labels and inputs disagree in length")
    return X


def fgsm(model: Mlp, X: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """One signed-gradient step of size epsilon on cross-entropy, clipped to [0, 1]."""
    X = _check_batch(model, X, y)
    value, g = _objective_and_grad(model, X, y, "cross_entropy", None)
    if not np.isfinite(value):
        raise NumericalError("non-finite FGSM objective")
    return np.clip(X + cfg.epsilon * np.sign(g), 0.0, 1.0)


def random_start_noise(shape, epsilon: float, seed: int, sample_ids=None, stream=()) -> np.ndarray:
    """Uniform ``[-eps, eps]`` noise from substream ``(seed, *stream, sample_id)``."""
    n, d = shape
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    noise = np.empty((n, d))
    for row, sid in enumerate(ids):
        noise[row] = make_rng(seed, *stream, int(sid)).uniform(-epsilon, epsilon, d)
    return noise


def pgd(
    model: Mlp,
    X: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    natural_logits: np.ndarray | None = None,
    seed: int = 0,
    sample_ids=None,
    stream: tuple = (),
) -> np.ndarray:
    """Projected signed-gradient ascent inside the L-inf ball around ``X``.

    Each step is: ascent by ``step_size * sign(grad)``, projection onto the
    epsilon ball, clip to [0, 1]. ``natural_logits`` is required by the
    ``kl_to_natural`` objective. Random-start noise for sample ``i`` is drawn
    from the substream ``(seed, *stream, sample_ids[i])`` so results do not
    depend on how a batch is split.
    """
    X0 = _check_batch(model, X, y)
    eps = float(cfg.epsilon)
    lo, hi = X0 - eps, X0 + eps
    x = X0.copy()
    if cfg.random_start and eps > 0:
        x = np.clip(x + random_start_noise(X0.shape, eps, seed, sample_ids, stream), 0.0, 1.0)
    for it in range(cfg.iterations):
        value, g = _objective_and_grad(model, x, y, cfg.objective, natural_logits)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite attack objective at iteration {it}")
        x = x + cfg.step_size * np.sign(g)
        x = np.clip(np.clip(x, lo, hi), 0.0, 1.0)
    return x
