"""Flat ``key = value`` run configuration files.

One setting per line, ``#`` starts a comment, unknown keys are errors.
Lists are comma separated. Recognised keys and defaults are listed in
``DEFAULTS`` below; training keys mirror :class:`TrainConfig` and
:class:`MethodSpec`, the rest choose the dataset, evaluation budget and
output location.
"""
from __future__ import annotations

from dataclasses import dataclass

from .attacks import AttackConfig
from .datasets import LabeledBatch, gaussian_blobs, load_csv, two_moons
from .training import MethodSpec, TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, str] = {
    # training loop
    "epochs": "30",
    "batch_size": "128",
    "lr": "0.1",
    "lr_milestones": "0.75,0.9",
    "lr_factor": "0.1",
    "momentum": "0.9",
    "weight_decay": "0.0002",
    "seed": "1",
    "std_hidden": "64,64",
    "adv_hidden": "64,64",
    "checkpoint_every": "0",
    # training attack (objective follows the method)
    "attack_epsilon": "0.05",
    "attack_step_size": "0.0125",
    "attack_iterations": "10",
    "attack_random_start": "true",
    # method
    "method": "trades",
    "train_regularizer": "true",
    "absolute_relation": "false",
    "detach_standard": "true",
    "standard_checkpoint": "",
    "trades_beta": "6.0",
    "lbgat_gamma": "1.0",
    "lambda_base": "5.0",
    "lambda_schedule": "constant",
    "lambda_exp_variant": "inside",
    # data
    "dataset": "two_moons",
    "n_train": "2000",
    "n_test": "1000",
    "noise": "0.1",
    "n_classes": "3",
    "spread": "0.15",
    "data_seed": "100",
    "test_seed": "200",
    "train_csv": "",
    "test_csv": "",
    # evaluation
    "eval_epsilon": "0.05",
    "eval_step_size": "0.00625",
    "topology_k": "30",
    # output
    "out_dir": "runs",
    "run_id": "run",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(file_values: dict[str, str], overrides: dict[str, str] | None = None) -> dict[str, str]:
    """Defaults, then file values, then overrides (flags win)."""
    resolved = dict(DEFAULTS)
    resolved.update(file_values)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown override {key!r}")
        resolved[key] = value
    return resolved


def format_config(values: dict[str, str]) -> str:
    """Canonical text form, keys in ``DEFAULTS`` order; parses back to ``values``."""
    return "".join(f"{key} = {values[key]}\n" for key in DEFAULTS)


def _bool(key: str, v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _ints(key: str, v: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in v.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _floats(key: str, v: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in v.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _num(cast, key: str, v: str):
    try:
        return cast(v)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    values: dict

    @property
    def eval_attack(self) -> AttackConfig:
        return AttackConfig(float(self.values["eval_epsilon"]), float(self.values["eval_step_size"]), 20, False)

    @property
    def topology_k(self) -> int:
        return int(self.values["topology_k"])

    def load_data(self) -> tuple[LabeledBatch, LabeledBatch]:
        return load_dataset(self.values)


def build(values: dict[str, str]) -> RunConfig:
    v = values
    try:
        method = MethodSpec(
            robust_kind=v["method"],
            use_train_regularizer=_bool("train_regularizer", v["train_regularizer"]),
            use_absolute_relation=_bool("absolute_relation", v["absolute_relation"]),
            trades_beta=_num(float, "trades_beta", v["trades_beta"]),
            lbgat_gamma=_num(float, "lbgat_gamma", v["lbgat_gamma"]),
            lambda_base=_num(float, "lambda_base", v["lambda_base"]),
            lambda_schedule=v["lambda_schedule"],
            lambda_exp_variant=v["lambda_exp_variant"],
            detach_standard=_bool("detach_standard", v["detach_standard"]),
            standard_checkpoint=v["standard_checkpoint"] or None,
        )
        attack = AttackConfig(
            epsilon=_num(float, "attack_epsilon", v["attack_epsilon"]),
            step_size=_num(float, "attack_step_size", v["attack_step_size"]),
            iterations=_num(int, "attack_iterations", v["attack_iterations"]),
            random_start=_bool("attack_random_start", v["attack_random_start"]),
        )
        train = TrainConfig(
            epochs=_num(int, "epochs", v["epochs"]),
            batch_size=_num(int, "batch_size", v["batch_size"]),
            lr=_num(float, "lr", v["lr"]),
            lr_milestones=_floats("lr_milestones", v["lr_milestones"]),
            lr_factor=_num(float, "lr_factor", v["lr_factor"]),
            momentum=_num(float, "momentum", v["momentum"]),
            weight_decay=_num(float, "weight_decay", v["weight_decay"]),
            seed=_num(int, "seed", v["seed"]),
            std_hidden=_ints("std_hidden", v["std_hidden"]),
            adv_hidden=_ints("adv_hidden", v["adv_hidden"]),
            attack=attack,
            method=method,
            checkpoint_every=_num(int, "checkpoint_every", v["checkpoint_every"]),
        )
        for key in ("eval_epsilon", "eval_step_size"):
            _num(float, key, v[key])
        for key in ("n_train", "n_test", "data_seed", "test_seed", "topology_k", "n_classes"):
            _num(int, key, v[key])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(train=train, values=dict(values))


def load_config(path, overrides: dict[str, str] | None = None) -> tuple[RunConfig, str]:
    """Parse, resolve and validate a config file; returns ``(config, snapshot text)``."""
    with open(path) as fh:
        text = fh.read()
    values = resolve(parse_config_text(text, str(path)), overrides)
    return build(values), format_config(values)


def load_dataset(v: dict[str, str]) -> tuple[LabeledBatch, LabeledBatch]:
    """Train and test batches described by the data keys."""
    kind = v["dataset"]
    n_train, n_test = int(v["n_train"]), int(v["n_test"])
    train_seed, test_seed = int(v["data_seed"]), int(v["test_seed"])
    if kind == "two_moons":
        noise = float(v["noise"])
        return two_moons(n_train, noise, train_seed), two_moons(n_test, noise, test_seed)
    if kind == "blobs":
        C, spread = int(v["n_classes"]), float(v["spread"])
        return gaussian_blobs(n_train, C, spread, train_seed), gaussian_blobs(n_test, C, spread, test_seed)
    if kind == "csv":
        if not v["train_csv"] or not v["test_csv"]:
            raise ConfigError("dataset=csv needs train_csv and test_csv")
        train = load_csv(v["train_csv"])
        test = load_csv(v["test_csv"], n_classes=train.n_classes)
        return train, test
    raise ConfigError(f"unknown dataset {kind!r}")
