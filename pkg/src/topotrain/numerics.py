"""Dense numeric helpers shared by every other module.

All arrays are float64. Randomness comes from numpy's PCG64 bit generator
seeded through ``SeedSequence``; PCG64 is a fixed, documented algorithm, so a
seed plus a tuple of integer stream keys yields the same stream on every
platform.
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class NumericalError(ArithmeticError):
    """A loss, gradient or objective evaluated to NaN or Inf."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, *keys)``.

    Distinct key tuples give statistically independent substreams, which is
    how per-epoch shuffles, per-sample attack noise and model init are kept
    apart from one another.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def ensure_finite(value, what: str = "value"):
    """Raise :class:`NumericalError` unless ``value`` is entirely finite."""
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite {what}")
    return value


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax (normalised over classes) with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def finite_diff_grad(
    scalar_fn: Callable[[np.ndarray], float], at: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``scalar_fn`` at ``at``.

    Each entry is ``(f(x + h e) - f(x - h e)) / (2h)``. The input is never
    modified in place as seen by the caller.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        f_plus = float(scalar_fn(x.copy()))
        x[idx] = orig - h
        f_minus = float(scalar_fn(x.copy()))
        x[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"non-finite function value perturbing entry {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a-b| / max(max|a|, max|b|, floor)``; used by gradient checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)
