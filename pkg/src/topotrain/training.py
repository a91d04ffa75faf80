"""Joint training of a standard model and an adversarial model.

Per mini-batch the standard model ``M`` is trained on natural inputs with
cross-entropy only. The adversarial model ``M'`` is trained on attacked
inputs with a robust loss plus ``lambda(t)`` times the topology loss, which
aligns the neighbour graph of ``M'`` features on adversarial inputs with the
(constant) neighbour graph of ``M`` features on the natural inputs.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attacks import AttackConfig, pgd
from .datasets import LabeledBatch
from .losses import cross_entropy, kl_divergence, predict
from .model import Mlp, Sgd, backward, forward, init_mlp, load_checkpoint, save_checkpoint
from .numerics import NumericalError, make_rng
from .topology import absolute_relation_loss_and_grads, topology_loss_and_grads

ROBUST_KINDS = ("standard_only", "vanilla_at", "trades", "vanilla_at+lbgat", "trades+lbgat")
LAMBDA_SCHEDULES = ("constant", "sigmoid_ramp")
LAMBDA_EXP_VARIANTS = ("inside", "outside")

# substream keys
_INIT, _SHUFFLE, _ATTACK = 1, 2, 3


@dataclass(frozen=True)
class MethodSpec:
    robust_kind: str = "trades"
    use_train_regularizer: bool = True
    use_absolute_relation: bool = False
    trades_beta: float = 6.0
    lbgat_gamma: float = 1.0
    lambda_base: float = 5.0
    lambda_schedule: str = "constant"
    lambda_exp_variant: str = "inside"
    # False gives the TRAIN' ablation: topology gradients also reach M
    detach_standard: bool = True
    # TRAIN* ablation: M is loaded from this checkpoint and never updated
    standard_checkpoint: str | None = None

    def __post_init__(self):
        if self.robust_kind not in ROBUST_KINDS:
            raise ValueError(f"unknown robust kind {self.robust_kind!r}; choose from {ROBUST_KINDS}")
        if self.uses_trades and not self.trades_beta > 0:
            raise ValueError("trades_beta must be positive")
        if self.uses_lbgat and not self.lbgat_gamma > 0:
            raise ValueError("lbgat_gamma must be positive")
        if self.lambda_schedule not in LAMBDA_SCHEDULES:
            raise ValueError(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.lambda_exp_variant not in LAMBDA_EXP_VARIANTS:
            raise ValueError(f"unknown lambda exponent variant {self.lambda_exp_variant!r}")
        if self.use_train_regularizer and self.use_absolute_relation:
            raise ValueError("choose either the topology regularizer or the absolute-relation ablation")

    @property
    def uses_trades(self) -> bool:
        return self.robust_kind.startswith("trades")

    @property
    def uses_lbgat(self) -> bool:
        return self.robust_kind.endswith("+lbgat")

    @property
    def regularized(self) -> bool:
        return self.use_train_regularizer or self.use_absolute_relation


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    lr_milestones: tuple[float, ...] = (0.75, 0.9)
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    seed: int = 1
    std_hidden: tuple[int, ...] = (64, 64)
    adv_hidden: tuple[int, ...] = (64, 64)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(0.05, 0.0125, 10, True))
    method: MethodSpec = field(default_factory=MethodSpec)
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.method.regularized and self.batch_size < 3:
            raise ValueError("the topology loss needs batches of at least 3 samples")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def attack_for_training(self) -> AttackConfig:
        objective = "kl_to_natural" if self.method.uses_trades else "cross_entropy"
        return dataclasses.replace(self.attack, objective=objective)

    def lr_at(self, t: int) -> float:
        drops = sum(t >= int(round(m * self.epochs)) for m in self.lr_milestones)
        return self.lr * self.lr_factor ** drops


@dataclass
class EpochRecord:
    epoch: int
    loss_st: float
    loss_robust: float
    loss_tp: float
    lam: float
    natural_acc: float
    robust_acc: float
    wall_clock_seconds: float

    def metrics_json(self) -> str:
        """JSON line for the metrics file.

        Wall-clock time is left out so that repeated runs produce identical
        files; it is written to the separate timings file instead.
        """
        d = dataclasses.asdict(self)
        d.pop("wall_clock_seconds")
        return json.dumps(d, sort_keys=False)


def lambda_at(t: int, T: int, base: float, schedule: str = "constant", variant: str = "inside") -> float:
    """Topology-loss weight at epoch ``t`` (0-based) of ``T``.

    ``sigmoid_ramp`` multiplies ``base`` by ``2 / (1 + exp(-(10 t / T) - 1))``.
    The ``outside`` variant reads the ramp as ``2 / (1 + exp(-10 t / T)) - 1``.
    """
    if schedule == "constant":
        return float(base)
    if schedule != "sigmoid_ramp":
        raise ValueError(f"unknown lambda schedule {schedule!r}")
    if variant == "inside":
        a = 2.0 / (1.0 + math.exp(-(10.0 * t / T) - 1.0))
    elif variant == "outside":
        a = 2.0 / (1.0 + math.exp(-10.0 * t / T)) - 1.0
    else:
        raise ValueError(f"unknown lambda exponent variant {variant!r}")
    return float(base) * a


def trades_loss(
    logits_nat: np.ndarray, logits_adv: np.ndarray, y: np.ndarray, beta: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """``CE(natural logits, y) + beta * KL(z_nat || z_adv)``.

    Returns ``(value, grad_logits_nat, grad_logits_adv)``.
    """
    ce, g_ce = cross_entropy(logits_nat, y)
    kl, g_kl_nat, g_kl_adv = kl_divergence(logits_nat, logits_adv)
    value = ce + beta * kl
    if not np.isfinite(value):
        raise NumericalError("non-finite TRADES loss")
    return value, g_ce + beta * g_kl_nat, beta * g_kl_adv


def lbgat_coupling(logits_adv: np.ndarray, logits_std: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """``gamma * mean_i ||logits_adv_i - logits_std_i||^2``; gradient w.r.t. ``logits_adv``.

    The standard-model logits are treated as constants.
    """
    if logits_adv.shape != logits_std.shape:
        raise ValueError(f"logit shapes differ: {logits_adv.shape} vs {logits_std.shape}")
    n = logits_adv.shape[0]
    diff = logits_adv - logits_std
    value = gamma * float((diff ** 2).sum()) / n
    return value, 2.0 * gamma * diff / n


@dataclass
class TrainState:
    """Both models plus their optimisers; owned by the training loop."""

    std: Mlp
    adv: Mlp
    std_opt: Sgd
    adv_opt: Sgd
    freeze_std: bool = False


def init_state(cfg: TrainConfig, n_features: int, n_classes: int) -> TrainState:
    """Initialise both models from the same init substream.

    Models with identical layer sizes therefore start from identical weights,
    which makes an epsilon-zero adversarial run coincide with standard training.
    """
    method = cfg.method
    if method.standard_checkpoint:
        std, _, _ = load_checkpoint(method.standard_checkpoint)
        if std.dims[0] != n_features or std.dims[-1] != n_classes:
            raise ValueError("standard checkpoint does not match the data shape")
        freeze = True
    else:
        std = init_mlp((n_features, *cfg.std_hidden, n_classes), make_rng(cfg.seed, _INIT))
        freeze = False
    adv = init_mlp((n_features, *cfg.adv_hidden, n_classes), make_rng(cfg.seed, _INIT))
    return TrainState(
        std=std,
        adv=adv,
        std_opt=Sgd(std, cfg.lr, cfg.momentum, cfg.weight_decay),
        adv_opt=Sgd(adv, cfg.lr, cfg.momentum, cfg.weight_decay),
        freeze_std=freeze,
    )


@dataclass
class BatchResult:
    loss_st: float
    loss_robust: float
    loss_tp: float
    loss_at: float
    std_grads: list[np.ndarray]
    adv_grads: list[np.ndarray] | None
    natural_correct: int
    robust_correct: int


def _add_grads(a: list[np.ndarray] | None, b: list[np.ndarray]) -> list[np.ndarray]:
    return list(b) if a is None else [x + y for x, y in zip(a, b)]


def batch_step(
    state: TrainState, cfg: TrainConfig, X: np.ndarray, y: np.ndarray, sample_ids: np.ndarray, t: int
) -> BatchResult:
    """Losses and gradients for one mini-batch (no parameter update)."""
    method = cfg.method
    lam = lambda_at(t, cfg.epochs, method.lambda_base, method.lambda_schedule, method.lambda_exp_variant)
    attack = cfg.attack_for_training()
    stream = (_ATTACK, t)

    out_std = forward(state.std, X)
    loss_st, g_std_logits = cross_entropy(out_std.logits, y)
    g_std_features = None

    if method.robust_kind == "standard_only":
        # attack M only to log a robust accuracy; it does not affect training
        X_adv = pgd(state.std, X, y, dataclasses.replace(attack, objective="cross_entropy"),
                    seed=cfg.seed, sample_ids=sample_ids, stream=stream)
        robust_correct = int((predict(forward(state.std, X_adv).logits) == y).sum())
        std_grads, _ = backward(state.std, out_std, None, g_std_logits)
        return BatchResult(loss_st, 0.0, 0.0, 0.0, std_grads, None,
                           int((predict(out_std.logits) == y).sum()), robust_correct)

    out_nat = forward(state.adv, X)
    natural_logits = out_nat.logits if method.uses_trades else None
    X_adv = pgd(state.adv, X, y, attack, natural_logits=natural_logits,
                seed=cfg.seed, sample_ids=sample_ids, stream=stream)
    out_adv = forward(state.adv, X_adv)

    g_nat_logits = np.zeros_like(out_nat.logits)
    if method.uses_trades:
        loss_robust, g_nat_logits, g_adv_logits = trades_loss(out_nat.logits, out_adv.logits, y, method.trades_beta)
    else:
        loss_robust, g_adv_logits = cross_entropy(out_adv.logits, y)
    if method.uses_lbgat:
        coupling, g_c = lbgat_coupling(out_adv.logits, out_std.logits, method.lbgat_gamma)
        loss_robust += coupling
        g_adv_logits = g_adv_logits + g_c

    loss_tp = 0.0
    g_adv_features = None
    if method.regularized:
        reg = topology_loss_and_grads if method.use_train_regularizer else absolute_relation_loss_and_grads
        loss_tp, g_f_std, g_f_adv = reg(out_std.features, out_adv.features, method.detach_standard)
        g_adv_features = lam * g_f_adv
        if not method.detach_standard:
            g_std_features = lam * g_f_std

    loss_at = loss_robust + lam * loss_tp
    if not np.isfinite(loss_at) or not np.isfinite(loss_st):
        raise NumericalError(
            f"non-finite loss at epoch {t}: L_ST={loss_st} L_robust={loss_robust} L_TP={loss_tp}"
        )

    std_grads, _ = backward(state.std, out_std, g_std_features, g_std_logits)
    adv_grads, _ = backward(state.adv, out_adv, g_adv_features, g_adv_logits)
    if method.uses_trades:
        nat_grads, _ = backward(state.adv, out_nat, None, g_nat_logits)
        adv_grads = _add_grads(adv_grads, nat_grads)

    return BatchResult(
        loss_st, loss_robust, loss_tp, loss_at, std_grads, adv_grads,
        int((predict(out_nat.logits) == y).sum()),
        int((predict(out_adv.logits) == y).sum()),
    )


def train_epoch(state: TrainState, data: LabeledBatch, cfg: TrainConfig, t: int) -> EpochRecord:
    """Run one epoch of joint training, updating ``state`` in place."""
    start = time.perf_counter()
    n = len(data)
    order = make_rng(cfg.seed, _SHUFFLE, t).permutation(n)
    lr = cfg.lr_at(t)
    state.std_opt.lr = lr
    state.adv_opt.lr = lr
    method = cfg.method
    lam = lambda_at(t, cfg.epochs, method.lambda_base, method.lambda_schedule, method.lambda_exp_variant)

    sums = np.zeros(3)
    n_batches = seen = 0
    nat_correct = rob_correct = 0
    for b, lo in enumerate(range(0, n, cfg.batch_size)):
        idx = order[lo:lo + cfg.batch_size]
        if method.regularized and idx.size < 3:
            continue  # a trailing batch too small for a neighbour graph
        try:
            res = batch_step(state, cfg, data.X[idx], data.y[idx], idx, t)
        except NumericalError as exc:
            raise NumericalError(f"epoch {t}, batch {b}: {exc}") from exc
        if not state.freeze_std:
            state.std_opt.step(state.std, res.std_grads)
        if res.adv_grads is not None:
            state.adv_opt.step(state.adv, res.adv_grads)
        sums += (res.loss_st, res.loss_robust, res.loss_tp)
        n_batches += 1
        seen += idx.size
        nat_correct += res.natural_correct
        rob_correct += res.robust_correct
    means = sums / max(n_batches, 1)
    seen = max(seen, 1)
    return EpochRecord(
        epoch=t,
        loss_st=float(means[0]),
        loss_robust=float(means[1]),
        loss_tp=float(means[2]),
        lam=lam,
        natural_acc=nat_correct / seen,
        robust_acc=rob_correct / seen,
        wall_clock_seconds=time.perf_counter() - start,
    )


@dataclass
class TrainResult:
    std: Mlp
    adv: Mlp
    records: list[EpochRecord]
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def robust_model(self) -> Mlp:
        return self.adv


def train(
    cfg: TrainConfig,
    data: LabeledBatch,
    checkpoint_dir: str | Path | None = None,
    run_id: str = "run",
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs; deterministic given ``cfg.seed``.

    When a directory is given, checkpoints named
    ``{run_id}.{std|adv}.{epoch}.ckpt`` are written after the last epoch and
    every ``cfg.checkpoint_every`` epochs (0 means final only).
    """
    state = init_state(cfg, data.X.shape[1], data.n_classes)
    records = []
    written: list[Path] = []
    for t in range(cfg.epochs):
        rec = train_epoch(state, data, cfg, t)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None:
            last = t == cfg.epochs - 1
            periodic = cfg.checkpoint_every > 0 and (t + 1) % cfg.checkpoint_every == 0
            if last or periodic:
                written += save_model_pair(checkpoint_dir, run_id, state, cfg.seed, t + 1)
    return TrainResult(state.std, state.adv, records, written)


def save_model_pair(directory, run_id: str, state: TrainState, seed: int, epoch: int) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, model in (("std", state.std), ("adv", state.adv)):
        p = directory / f"{run_id}.{name}.{epoch}.ckpt"
        save_checkpoint(p, model, seed=seed, epoch=epoch)
        paths.append(p)
    return paths
