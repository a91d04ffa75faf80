"""Seeded synthetic datasets in [0, 1]^d and a CSV loader/writer."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import make_rng

LOW, HIGH = 0.05, 0.95


class DataValidationError(ValueError):
    pass


@dataclass
class LabeledBatch:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataValidationError("X must be n x d with one label per row")
        if self.X.shape[0] < 1:
            raise DataValidationError("empty batch")
        if np.any(self.X < 0.0) or np.any(self.X > 1.0):
            raise DataValidationError("features must lie in [0, 1]")
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise DataValidationError("label out of range")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.X[idx], self.y[idx], self.n_classes)


def _fit_box(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Isotropic affine map of the box [lo, hi] into the centre of [0.05, 0.95]^d."""
    scale = (HIGH - LOW) / np.max(hi - lo)
    centre = 0.5 * (lo + hi)
    mapped = 0.5 + (points - centre) * scale
    # only rare > 4-sigma noise draws fall outside the padded box
    return np.clip(mapped, LOW, HIGH)


def two_moons(n: int, noise_sigma: float = 0.1, seed: int = 0) -> LabeledBatch:
    """Two interleaved half circles (n/2 each) with Gaussian noise.

    The affine map depends only on ``noise_sigma``, so train and test draws
    with different seeds share one coordinate system.
    """
    if n % 2 or n < 2:
        raise ValueError("two_moons needs a positive even n")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = make_rng(seed, 0x6D6F6F6E)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([upper, lower])
    y = np.repeat([0, 1], half)
    if noise_sigma > 0:
        X = X + rng.normal(0.0, noise_sigma, X.shape)
    perm = rng.permutation(n)
    pad = 4.0 * noise_sigma
    X = _fit_box(X[perm], np.array([-1.0 - pad, -0.5 - pad]), np.array([2.0 + pad, 1.0 + pad]))
    return LabeledBatch(X, y[perm], 2)


def gaussian_blobs(n: int, n_classes: int = 3, spread: float = 0.15, seed: int = 0) -> LabeledBatch:
    """Isotropic Gaussian clusters with centres evenly spaced on the unit circle."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n < 1 or spread < 0:
        raise ValueError("n must be positive and spread non-negative")
    rng = make_rng(seed, 0x626C6F62)
    y = rng.permutation(np.arange(n) % n_classes)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centres = np.column_stack([np.cos(angles), np.sin(angles)])
    X = centres[y] + rng.normal(0.0, spread, (n, 2))
    pad = 1.0 + 4.0 * spread
    return LabeledBatch(_fit_box(X, np.array([-pad, -pad]), np.array([pad, pad])), y, n_classes)


def save_csv(path, batch: LabeledBatch) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f_{i}" for i in range(batch.X.shape[1])])
        for label, row in zip(batch.y, batch.X):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, n_classes: int | None = None) -> LabeledBatch:
    """Load ``label,f_0,...`` rows. Values outside [0, 1] are rejected, not clipped."""
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise DataValidationError(f"{path}:1: expected header 'label,f_0,...'")
        width = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width + 1:
                raise DataValidationError(f"{path}:{lineno}: expected {width + 1} fields, got {len(rec)}")
            try:
                label = int(rec[0])
                feats = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise DataValidationError(f"{path}:{lineno}: {exc}") from exc
            if label < 0:
                raise DataValidationError(f"{path}:{lineno}: negative label {label}")
            for v in feats:
                if not 0.0 <= v <= 1.0:
                    raise DataValidationError(f"{path}:{lineno}: feature {v} outside [0, 1]")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    C = int(y.max()) + 1 if n_classes is None else n_classes
    return LabeledBatch(np.array(rows, dtype=np.float64), y, C)
