"""Natural accuracy, robust accuracy and the kNN topology score."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, pgd
from .datasets import LabeledBatch
from .losses import predict
from .model import Mlp, forward


def pgd20(epsilon: float = 0.031, step_size: float = 0.007, objective: str = "cross_entropy") -> AttackConfig:
    """Deterministic 20-step evaluation attack (no random start)."""
    return AttackConfig(epsilon, step_size, 20, False, objective)


@dataclass(frozen=True)
class TopologyScoreConfig:
    k: int = 30
    include_adversarial_support: bool = True
    support_attack: AttackConfig = field(default_factory=pgd20)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


def _check_nonempty(batch: LabeledBatch):
    if batch is None or len(batch.y) == 0:
        raise ValueError("cannot evaluate on an empty batch")


def accuracy(model: Mlp, batch: LabeledBatch) -> float:
    """Fraction of argmax predictions equal to the label (ties go to the lowest class)."""
    _check_nonempty(batch)
    return float(np.mean(predict(forward(model, batch.X).logits) == batch.y))


def robust_accuracy(model: Mlp, batch: LabeledBatch, attack: AttackConfig | None = None) -> float:
    """Accuracy on PGD outputs; defaults to PGD-20 at eps 0.031, step 0.007."""
    _check_nonempty(batch)
    attack = pgd20() if attack is None else attack
    X_adv = pgd(model, batch.X, batch.y, attack)
    return float(np.mean(predict(forward(model, X_adv).logits) == batch.y))


def _unit(F: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    # a dead (all-zero) feature row has no direction: cosine similarity 0 to everything
    return np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)


# distances are ranked on a 1e-12 grid so that mathematically equal distances
# (e.g. collinear ReLU features) tie exactly instead of by rounding noise
DISTANCE_RESOLUTION = 1e-12


def distance_keys(D: np.ndarray) -> np.ndarray:
    """Cosine distances as integer multiples of ``DISTANCE_RESOLUTION``."""
    return np.rint(np.asarray(D) / DISTANCE_RESOLUTION).astype(np.int64)


def knn_predict(support_F: np.ndarray, support_y: np.ndarray, query_F: np.ndarray, k: int) -> np.ndarray:
    """Cosine-distance kNN majority vote.

    Neighbours are ranked by distance, then by support index. Vote ties go to
    the label whose neighbours have the smaller summed distance, then to the
    lower label. Distances compare on a 1e-12 grid (see ``distance_keys``).
    """
    m = support_F.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} out of range for a support set of {m}")
    keys = distance_keys(1.0 - _unit(query_F) @ _unit(support_F).T)
    nn = np.argsort(keys, axis=1, kind="stable")[:, :k]
    labels = np.asarray(support_y)[nn]
    dists = np.take_along_axis(keys, nn, axis=1)
    n_labels = int(np.max(support_y)) + 1
    preds = np.empty(query_F.shape[0], dtype=np.int64)
    for row in range(query_F.shape[0]):
        counts = np.bincount(labels[row], minlength=n_labels)
        tied = np.flatnonzero(counts == counts.max())
        if tied.size == 1:
            preds[row] = tied[0]
            continue
        totals = np.array([dists[row][labels[row] == c].sum() for c in tied])
        preds[row] = tied[np.argmin(totals)]  # integer sums: exact; argmin keeps the lower label
    return preds


def topology_features(
    model: Mlp, support: LabeledBatch, cfg: TopologyScoreConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Support features (natural, then adversarial when enabled) and their labels."""
    feats = [forward(model, support.X).features]
    labels = [support.y]
    if cfg.include_adversarial_support:
        X_adv = pgd(model, support.X, support.y, cfg.support_attack)
        feats.append(forward(model, X_adv).features)
        labels.append(support.y)
    return np.vstack(feats), np.concatenate(labels)


def topology_score(
    model: Mlp,
    support: LabeledBatch,
    test: LabeledBatch,
    cfg: TopologyScoreConfig | None = None,
    attack_test: AttackConfig | None = None,
) -> float:
    """kNN accuracy over penultimate features.

    With ``attack_test`` the queries are adversarial versions of the test
    points (the robust topology score); otherwise they are natural.
    """
    cfg = TopologyScoreConfig() if cfg is None else cfg
    _check_nonempty(test)
    support_F, support_y = topology_features(model, support, cfg)
    if cfg.k > support_F.shape[0] - 1:
        raise ValueError(f"k={cfg.k} too large for a support set of {support_F.shape[0]}")
    X_q = test.X if attack_test is None else pgd(model, test.X, test.y, attack_test)
    preds = knn_predict(support_F, support_y, forward(model, X_q).features, cfg.k)
    return float(np.mean(preds == test.y))


def evaluation_report(
    model: Mlp,
    support: LabeledBatch,
    test: LabeledBatch,
    epsilon: float,
    step_size: float,
    k: int = 30,
    iterations: int = 20,
) -> dict[str, float]:
    """Metrics report with the fixed key set used by the CLI.

    The ``pgd20``-named keys use ``iterations`` steps (20 unless overridden).
    """
    attack = AttackConfig(epsilon, step_size, iterations, False)
    margin = dataclasses.replace(attack, objective="margin")
    cfg = TopologyScoreConfig(k=k, include_adversarial_support=True, support_attack=attack)
    return {
        "natural_acc": accuracy(model, test),
        "pgd20_acc": robust_accuracy(model, test, attack),
        "margin_pgd20_acc": robust_accuracy(model, test, margin),
        "topology_score_natural": topology_score(model, support, test, cfg),
        "topology_score_robust": topology_score(model, support, test, cfg, attack_test=attack),
    }


def export_features(path, model: Mlp, splits: dict[str, LabeledBatch], attack: AttackConfig | None) -> int:
    """Write ``split,label,is_adversarial,f_0,...`` rows; returns the row count."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "label", "is_adversarial"] + [f"f_{i}" for i in range(model.feature_dim)])
        for split, batch in splits.items():
            variants = [(0, batch.X)]
            if attack is not None:
                variants.append((1, pgd(model, batch.X, batch.y, attack)))
            for is_adv, X in variants:
                F = forward(model, X).features
                for label, f in zip(batch.y, F):
                    writer.writerow([split, int(label), is_adv] + [repr(float(v)) for v in f])
                    rows += 1
    return rows
