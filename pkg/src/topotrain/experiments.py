"""Multi-seed experiment drivers: the TRADES beta sweep and method comparisons."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .attacks import AttackConfig
from .datasets import LabeledBatch
from .evaluation import TopologyScoreConfig, accuracy, knn_predict, robust_accuracy, topology_features
from .model import forward
from .training import MethodSpec, TrainConfig, train


def spearman_or_none(x, y) -> float | None:
    """Spearman rank correlation; ``None`` when undefined (fewer than two
    points or a constant input)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    rho = spearmanr(x, y).statistic
    return None if not math.isfinite(rho) else float(rho)


@dataclass
class SweepRow:
    beta: float
    seed: int
    natural_acc: float
    robust_acc: float
    topology: dict[int, float]


@dataclass
class BetaSweepResult:
    rows: list[SweepRow]
    ks: tuple[int, ...]
    per_seed_spearman: dict[int, dict[int, float | None]] = field(default_factory=dict)

    def mean_spearman(self, k: int) -> float | None:
        vals = [d[k] for d in self.per_seed_spearman.values() if d.get(k) is not None]
        return float(np.mean(vals)) if vals else None

    def pooled_spearman(self, k: int) -> float | None:
        return spearman_or_none([r.beta for r in self.rows], [r.topology[k] for r in self.rows])

    def as_dict(self) -> dict:
        return {
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "spearman_mean_over_seeds": {str(k): self.mean_spearman(k) for k in self.ks},
            "spearman_pooled": {str(k): self.pooled_spearman(k) for k in self.ks},
        }


def _score_model(model, train_data, test_data, eval_attack: AttackConfig, ks) -> tuple[float, float, dict]:
    # one support set shared by every k; same result as topology_score per k
    support_F, support_y = topology_features(model, train_data, TopologyScoreConfig(1, True, eval_attack))
    query_F = forward(model, test_data.X).features
    topo = {}
    for k in ks:
        if not 1 <= k <= support_F.shape[0] - 1:
            raise ValueError(f"k={k} too large for a support set of {support_F.shape[0]}")
        topo[k] = float(np.mean(knn_predict(support_F, support_y, query_F, k) == test_data.y))
    return accuracy(model, test_data), robust_accuracy(model, test_data, eval_attack), topo


def beta_sweep(
    base: TrainConfig,
    train_data: LabeledBatch,
    test_data: LabeledBatch,
    betas,
    seeds,
    eval_attack: AttackConfig,
    ks=(30,),
    workers: int = 1,
    out_dir=None,
) -> BetaSweepResult:
    """Train plain TRADES for every (beta, seed) cell and score each model.

    Cells are independent (each seeds its own RNG streams), so ``workers > 1``
    runs them on a thread pool. With ``out_dir`` every cell writes its epoch
    metrics to ``out_dir/beta{beta}_seed{seed}/metrics.jsonl``.
    """
    ks = tuple(ks)
    cells = [(float(b), int(s)) for s in seeds for b in betas]

    def run(cell):
        beta, seed = cell
        method = dataclasses.replace(base.method, robust_kind="trades", trades_beta=beta,
                                     use_train_regularizer=False, use_absolute_relation=False)
        cfg = dataclasses.replace(base, seed=seed, method=method)
        res = train(cfg, train_data)
        if out_dir is not None:
            cell_dir = Path(out_dir) / f"beta{beta:g}_seed{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "metrics.jsonl").write_text("".join(r.metrics_json() + "\n" for r in res.records))
        nat, rob, topo = _score_model(res.adv, train_data, test_data, eval_attack, ks)
        return SweepRow(beta, seed, nat, rob, topo)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]

    result = BetaSweepResult(rows, ks)
    for seed in dict.fromkeys(int(s) for s in seeds):
        mine = [r for r in rows if r.seed == seed]
        result.per_seed_spearman[seed] = {
            k: spearman_or_none([r.beta for r in mine], [r.topology[k] for r in mine]) for k in ks
        }
    return result


@dataclass
class MethodScores:
    name: str
    natural_acc: list[float] = field(default_factory=list)
    robust_acc: list[float] = field(default_factory=list)
    topology: list[float] = field(default_factory=list)

    def mean(self, what: str) -> float:
        return float(np.mean(getattr(self, what)))


def compare_methods(
    base: TrainConfig,
    methods: dict[str, MethodSpec],
    train_data: LabeledBatch,
    test_data: LabeledBatch,
    seeds,
    eval_attack: AttackConfig,
    k: int = 30,
) -> dict[str, MethodScores]:
    """Train each named method over the same seeds and score the robust model.

    For ``standard_only`` the standard model is scored instead.
    """
    out = {}
    for name, method in methods.items():
        scores = MethodScores(name)
        for seed in seeds:
            res = train(dataclasses.replace(base, seed=int(seed), method=method), train_data)
            model = res.std if method.robust_kind == "standard_only" else res.adv
            nat, rob, topo = _score_model(model, train_data, test_data, eval_attack, (k,))
            scores.natural_acc.append(nat)
            scores.robust_acc.append(rob)
            scores.topology.append(topo[k])
        out[name] = scores
    return out
