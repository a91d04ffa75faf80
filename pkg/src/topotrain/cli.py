"""Command-line entry point: ``topotrain <command> ...``.

Every run-config key (see :mod:`topotrain.config`) is also a flag, with
underscores spelled as dashes (``trades_beta`` -> ``--trades-beta``). Flags
beat config-file values, and the resolved config is what gets snapshotted.

Exit codes: 0 ok, 2 usage or config error, 3 I/O or checkpoint error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .attacks import pgd
from .config import DEFAULTS, ConfigError, build, format_config, load_config, resolve
from .datasets import DataValidationError, gaussian_blobs, save_csv, two_moons
from .evaluation import (
    TopologyScoreConfig,
    evaluation_report,
    export_features,
    knn_predict,
    topology_features,
)
from .experiments import beta_sweep
from .model import CheckpointError, forward, load_checkpoint
from .numerics import NumericalError
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_key_flags(parser: argparse.ArgumentParser, keys) -> None:
    group = parser.add_argument_group("config keys (override the config file)")
    for key in keys:
        group.add_argument(_flag(key), dest=f"key_{key}", metavar="VALUE", default=None,
                           help=f"default: {DEFAULTS[key] or '(empty)'}")


def _overrides(args) -> dict[str, str]:
    return {
        name[4:]: value
        for name, value in vars(args).items()
        if name.startswith("key_") and value is not None
    }


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(p) for p in text.split(",") if p.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _resolve_args(args, need_file: bool):
    """Resolved key/value dict and its ``RunConfig`` from ``--config`` plus flags."""
    path = getattr(args, "config", None)
    if path is None:
        if need_file:
            raise UsageError("a config file is required")
        values = resolve({}, _overrides(args))
        return build(values), format_config(values)
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path, _overrides(args))


_DATA_KEYS = ("dataset", "n_train", "n_test", "noise", "n_classes", "spread",
              "data_seed", "test_seed", "train_csv", "test_csv")
_EVAL_KEYS = ("eval_epsilon", "eval_step_size", "topology_k")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    run, snapshot = _resolve_args(args, need_file=True)
    train_data, _ = run.load_data()
    run_dir = Path(run.values["out_dir"]) / run.values["run_id"]
    ckpt_dir = run_dir / "checkpoints"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(snapshot)
    started = _now()

    metrics = (run_dir / "metrics.jsonl").open("w")
    timings = (run_dir / "timings.jsonl").open("w")

    def on_epoch(rec):
        metrics.write(rec.metrics_json() + "\n")
        metrics.flush()
        timings.write(json.dumps({"epoch": rec.epoch, "wall_clock_seconds": rec.wall_clock_seconds}) + "\n")
        timings.flush()
        if not args.quiet:
            print(f"epoch {rec.epoch}: loss_st={rec.loss_st:.4f} loss_robust={rec.loss_robust:.4f} "
                  f"loss_tp={rec.loss_tp:.4f} nat={rec.natural_acc:.3f} rob={rec.robust_acc:.3f}")

    try:
        result = train(run.train, train_data, ckpt_dir, run.values["run_id"], on_epoch)
    finally:
        metrics.close()
        timings.close()
    manifest = {
        "run_id": run.values["run_id"],
        "seed": run.train.seed,
        "config_snapshot": snapshot,
        "started_at": started,
        "finished_at": _now(),
        "artifacts": {
            "config": "config.txt",
            "metrics": "metrics.jsonl",
            "timings": "timings.jsonl",
            "checkpoints": [str(p.relative_to(run_dir)) for p in result.checkpoints],
            "feature_exports": [],
        },
    }
    _write_json(run_dir / "manifest.json", manifest)
    print(f"wrote {run_dir}")
    return EXIT_OK


def _load_model(path):
    model, _, _ = load_checkpoint(path)
    return model


def cmd_evaluate(args) -> int:
    run, _ = _resolve_args(args, need_file=False)
    model = _load_model(args.checkpoint)
    support, test = run.load_data()
    report = evaluation_report(
        model, support, test,
        epsilon=float(run.values["eval_epsilon"]),
        step_size=float(run.values["eval_step_size"]),
        k=run.topology_k,
        iterations=args.iterations,
    )
    print(json.dumps(report, sort_keys=False))
    return EXIT_OK


def cmd_topology_score(args) -> int:
    run, _ = _resolve_args(args, need_file=False)
    model = _load_model(args.checkpoint)
    support, test = run.load_data()
    attack = run.eval_attack
    cfg = TopologyScoreConfig(1, not args.natural_support_only, attack)
    support_F, support_y = topology_features(model, support, cfg)
    X_q = test.X
    if args.robust:
        X_q = pgd(model, test.X, test.y, attack)
    query_F = forward(model, X_q).features
    ks = args.k or [run.topology_k]
    scores = {}
    for k in ks:
        if not 1 <= k <= support_F.shape[0] - 1:
            raise ConfigError(f"k={k} out of range for a support set of {support_F.shape[0]}")
        scores[str(k)] = float((knn_predict(support_F, support_y, query_F, k) == test.y).mean())
    print(json.dumps(scores))
    return EXIT_OK


def cmd_sweep_beta(args) -> int:
    run, snapshot = _resolve_args(args, need_file=True)
    train_data, test_data = run.load_data()
    ks = args.k or [run.topology_k]
    out = Path(run.values["out_dir"]) / run.values["run_id"]
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(snapshot)
    result = beta_sweep(run.train, train_data, test_data, args.betas, args.seeds,
                        run.eval_attack, ks, workers=args.workers, out_dir=out / "cells")
    summary = result.as_dict()
    _write_json(out / "sweep.json", summary)
    header = ["beta", "seed", "natural_acc", "robust_acc"] + [f"topo_k{k}" for k in ks]
    lines = ["\t".join(header)]
    for r in result.rows:
        lines.append("\t".join([f"{r.beta:g}", str(r.seed), f"{r.natural_acc:.4f}", f"{r.robust_acc:.4f}"]
                               + [f"{r.topology[k]:.4f}" for k in ks]))
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(json.dumps({"spearman_mean_over_seeds": summary["spearman_mean_over_seeds"],
                      "spearman_pooled": summary["spearman_pooled"]}))
    return EXIT_OK


def cmd_export_features(args) -> int:
    run, _ = _resolve_args(args, need_file=False)
    model = _load_model(args.checkpoint)
    support, test = run.load_data()
    attack = None if args.no_adversarial else run.eval_attack
    rows = export_features(args.out, model, {"train": support, "test": test}, attack)
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.dataset == "two_moons":
        batch = two_moons(args.n, args.noise, args.seed)
    else:
        batch = gaussian_blobs(args.n, args.n_classes, args.spread, args.seed)
    save_csv(args.out, batch)
    print(f"wrote {len(batch.y)} samples to {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topotrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a standard/adversarial model pair")
    p.add_argument("config", help="run config file (key = value lines)")
    p.add_argument("--quiet", action="store_true", help="no per-epoch output")
    _add_key_flags(p, DEFAULTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="print the evaluation JSON report for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="optional config file for data and eval keys")
    p.add_argument("--iterations", type=int, default=20, help="attack steps (default 20)")
    _add_key_flags(p, _DATA_KEYS + _EVAL_KEYS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("topology-score", help="kNN topology score of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config")
    p.add_argument("--k", type=_csv_list(int), help="comma separated k values, e.g. 5,10,20,30,40,50")
    p.add_argument("--robust", action="store_true", help="attack the test queries")
    p.add_argument("--natural-support-only", action="store_true")
    _add_key_flags(p, _DATA_KEYS + _EVAL_KEYS)
    p.set_defaults(func=cmd_topology_score)

    p = sub.add_parser("sweep-beta", help="TRADES beta sweep against the topology score")
    p.add_argument("config")
    p.add_argument("--betas", type=_csv_list(float), default=[1.0, 2.0, 4.0, 6.0])
    p.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2, 3, 4])
    p.add_argument("--k", type=_csv_list(int), help="comma separated k values, e.g. 5,10,20,30,40,50")
    p.add_argument("--workers", type=int, default=1, help="worker threads for (beta, seed) cells")
    _add_key_flags(p, DEFAULTS)
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("export-features", help="write penultimate features as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--no-adversarial", action="store_true", help="natural rows only")
    _add_key_flags(p, _DATA_KEYS + _EVAL_KEYS)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--dataset", choices=("two_moons", "blobs"), default="two_moons")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--spread", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits 2 on its own usage errors
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"topotrain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"topotrain: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, DataValidationError, OSError) as exc:
        print(f"topotrain: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # ConfigError and invalid parameter values
        print(f"topotrain: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
