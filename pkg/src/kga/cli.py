"""Command-line driver: splits, train-teacher, distill, eval, bench, report.

Configuration is a flat JSON file with dotted keys; command-line flags and
--set key=value pairs override file values. Unknown keys are rejected.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .amalgam import DistillConfig
from .bench import format_table, measure_inference
from .datasets import (
    CheckpointError,
    Checkpoint,
    DatasetError,
    atomic_write_json,
    load_checkpoint,
    load_dataset,
    restore_model,
    save_checkpoint,
)
from .diffcore import NumericError, constant
from .graphcore import (
    GraphError,
    SplitAssignment,
    largest_connected_component,
    make_splits,
    normalize_adjacency,
)
from .models import ARCHITECTURES, GRAPH_FREE, ModelError, ModelSpec
from .trainer import (
    TrainConfig,
    TrainError,
    distill_student,
    evaluate,
    summarize,
    train_teacher,
)


class ConfigError(ValueError):
    """Bad command-line or config-file input."""


KNOWN_KEYS = {
    "dataset": str,
    "out": str,
    "arch": str,
    "teachers": str,
    "student": str,
    "seeds": str,
    "seed": int,
    "workers": int,
    "checkpoint": str,
    "split": str,
    "eval.nodes": str,
    "train.lr": float,
    "train.weight_decay": float,
    "train.max_epochs": int,
    "train.patience": int,
    "distill.lambda": float,
    "distill.temperature": float,
    "model.hidden": int,
    "model.heads": int,
    "model.k_hops": int,
    "model.appnp_k": int,
    "model.alpha": float,
    "model.grid_size": int,
    "model.spline_order": int,
    "model.dropout": float,
    "bench.reps": int,
    "bench.warmup": int,
    "metrics": str,
}

DEFAULTS = {
    "student": "kan",
    "seeds": "0-9",
    "seed": 0,
    "workers": 1,
    "eval.nodes": "test",
    "train.lr": 0.01,
    "train.weight_decay": 5e-4,
    "train.max_epochs": 300,
    "train.patience": 50,
    "distill.lambda": 0.5,
    "distill.temperature": 2.0,
    "model.hidden": 32,
    "model.heads": 4,
    "model.k_hops": 2,
    "model.appnp_k": 10,
    "model.alpha": 0.1,
    "model.grid_size": 32,
    "model.spline_order": 3,
    "model.dropout": 0.5,
    "bench.reps": 100,
    "bench.warmup": 10,
}


def _coerce(key: str, value):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KNOWN_KEYS[key](value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {KNOWN_KEYS[key].__name__}, got {value!r}")


def resolve_config(args) -> dict:
    """Defaults <- config file <- first-class flags <- --set overrides."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}")
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a flat JSON object")
        for key, value in file_cfg.items():
            cfg[key] = _coerce(key, value)
    for key in KNOWN_KEYS:
        flag = key.replace(".", "_")
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key] = _coerce(key, value)
    return cfg


def parse_seeds(text) -> list[int]:
    text = str(text)
    if "-" in text and "," not in text:
        lo, _, hi = text.partition("-")
        try:
            lo, hi = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad seed range {text!r}")
        if hi < lo:
            raise ConfigError(f"bad seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}")


def require(cfg, key):
    if key not in cfg or cfg[key] in (None, ""):
        raise ConfigError(f"missing required config key {key!r}")
    return cfg[key]


def load_lcc(dataset_dir):
    graph, manifest = load_dataset(dataset_dir)
    lcc, _ = largest_connected_component(graph)
    return lcc, manifest


def build_spec(cfg, arch: str, graph, seed: int) -> ModelSpec:
    return ModelSpec(
        arch=arch,
        in_dim=graph.n_features,
        n_classes=graph.n_classes,
        hidden=cfg["model.hidden"],
        heads=cfg["model.heads"],
        k_hops=cfg["model.k_hops"],
        appnp_k=cfg["model.appnp_k"],
        alpha=cfg["model.alpha"],
        grid_size=cfg["model.grid_size"],
        spline_order=cfg["model.spline_order"],
        dropout=cfg["model.dropout"],
        seed=seed,
    )


def train_config(cfg, seeds) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        max_epochs=cfg["train.max_epochs"],
        patience=cfg["train.patience"],
        seeds=tuple(seeds),
    )


def print_table(headers, rows):
    rows = [tuple(str(c) for c in row) for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*headers))
    print(fmt.format(*("-" * w for w in widths)))
    for row in rows:
        print(fmt.format(*row))


def _run_jobs(fn, payloads, workers: int):
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


# --- worker functions (top level so process pools can pickle them) ---------

def _teacher_job(payload):
    cfg, arch, graph, seed = payload
    splits = make_splits(graph.labels, graph.n_classes, seed)
    spec = build_spec(cfg, arch, graph, seed)
    result, snap = train_teacher(spec, graph, splits, train_config(cfg, [seed]))
    return seed, spec, splits, result, snap


def _distill_job(payload):
    cfg, graph, seed = payload
    teacher_archs = [t.strip() for t in require(cfg, "teachers").split(",")]
    splits = make_splits(graph.labels, graph.n_classes, seed)
    tc = train_config(cfg, [seed])
    teachers, teacher_results = [], []
    for arch in teacher_archs:
        spec = build_spec(cfg, arch, graph, seed)
        result, snap = train_teacher(spec, graph, splits, tc)
        teachers.append((spec, snap))
        teacher_results.append((arch, result))
    student_spec = build_spec(cfg, cfg["student"], graph, seed)
    dcfg = DistillConfig(
        tuple(teacher_archs), lam=cfg["distill.lambda"],
        temperature=cfg["distill.temperature"], seed=seed,
    )
    result, snap = distill_student(student_spec, teachers, graph, splits, dcfg, tc)
    return seed, student_spec, splits, result, snap, teachers, teacher_results


# --- commands ---------------------------------------------------------------

def cmd_splits(cfg) -> int:
    graph, manifest = load_lcc(require(cfg, "dataset"))
    split = make_splits(graph.labels, graph.n_classes, cfg["seed"])
    payload = {"dataset": manifest.name, "n_nodes": graph.n_nodes, **split.as_dict()}
    out = require(cfg, "out")
    atomic_write_json(out, payload)
    print_table(
        ("dataset", "seed", "train", "val", "test"),
        [(manifest.name, cfg["seed"], split.train.size, split.val.size, split.test.size)],
    )
    return 0


def _write_seed_artifacts(out_dir, tag, seed, spec, splits, snap, result, graph_name, n_nodes):
    atomic_write_json(
        os.path.join(out_dir, f"splits-seed{seed}.json"),
        {"dataset": graph_name, "n_nodes": n_nodes, **splits.as_dict()},
    )
    save_checkpoint(
        os.path.join(out_dir, f"{tag}-seed{seed}.kgac"),
        Checkpoint(spec, snap, seed, result.best_val_accuracy),
    )


def cmd_train_teacher(cfg) -> int:
    arch = require(cfg, "arch")
    if arch not in ARCHITECTURES:
        raise ConfigError(
            f"unknown architecture {arch!r}; choose one of {', '.join(ARCHITECTURES)}"
        )
    graph, manifest = load_lcc(require(cfg, "dataset"))
    seeds = parse_seeds(cfg["seeds"])
    out_dir = require(cfg, "out")
    os.makedirs(out_dir, exist_ok=True)
    runs = _run_jobs(_teacher_job, [(cfg, arch, graph, s) for s in seeds], cfg["workers"])
    per_seed = []
    for seed, spec, splits, result, snap in runs:
        _write_seed_artifacts(out_dir, arch, seed, spec, splits, snap, result,
                              manifest.name, graph.n_nodes)
        per_seed.append(
            {
                "seed": seed,
                "val_accuracy": result.best_val_accuracy,
                "test_accuracy": result.test_accuracy,
                "epochs": result.epochs_run,
            }
        )
    aggregate = summarize(r["test_accuracy"] for r in per_seed)
    metrics = {
        "kind": "train-teacher",
        "arch": arch,
        "dataset": manifest.name,
        "config": cfg,
        "per_seed": per_seed,
        "aggregate": aggregate,
    }
    atomic_write_json(os.path.join(out_dir, f"metrics-{arch}.json"), metrics)
    print_table(
        ("arch", "dataset", "seeds", "mean_test_acc", "std"),
        [(arch, manifest.name, len(seeds), f"{aggregate['mean']:.4f}", f"{aggregate['std']:.4f}")],
    )
    return 0


def cmd_distill(cfg) -> int:
    teacher_archs = [t.strip() for t in require(cfg, "teachers").split(",")]
    if len(teacher_archs) != 2:
        raise ConfigError(
            f"distillation takes exactly 2 teachers, got {len(teacher_archs)}"
        )
    for arch in teacher_archs + [cfg["student"]]:
        if arch not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {arch!r}; choose one of {', '.join(ARCHITECTURES)}"
            )
    if cfg["student"] not in GRAPH_FREE:
        raise ConfigError(f"student must be graph-free ({', '.join(GRAPH_FREE)})")
    graph, manifest = load_lcc(require(cfg, "dataset"))
    seeds = parse_seeds(cfg["seeds"])
    out_dir = require(cfg, "out")
    os.makedirs(out_dir, exist_ok=True)
    runs = _run_jobs(_distill_job, [(cfg, graph, s) for s in seeds], cfg["workers"])
    per_seed = []
    for seed, spec, splits, result, snap, teachers, teacher_results in runs:
        tag = f"student-{cfg['student']}"
        _write_seed_artifacts(out_dir, tag, seed, spec, splits, snap, result,
                              manifest.name, graph.n_nodes)
        for (t_spec, t_snap), (t_arch, t_result) in zip(teachers, teacher_results):
            save_checkpoint(
                os.path.join(out_dir, f"{t_arch}-seed{seed}.kgac"),
                Checkpoint(t_spec, t_snap, seed, t_result.best_val_accuracy),
            )
        per_seed.append(
            {
                "seed": seed,
                "val_accuracy": result.best_val_accuracy,
                "test_accuracy": result.test_accuracy,
                "epochs": result.epochs_run,
                "teachers": {a: r.test_accuracy for a, r in teacher_results},
            }
        )
    aggregate = summarize(r["test_accuracy"] for r in per_seed)
    metrics = {
        "kind": "distill",
        "teachers": teacher_archs,
        "student": cfg["student"],
        "dataset": manifest.name,
        "config": cfg,
        "per_seed": per_seed,
        "aggregate": aggregate,
    }
    atomic_write_json(
        os.path.join(out_dir, f"metrics-{'+'.join(teacher_archs)}-{cfg['student']}.json"),
        metrics,
    )
    print_table(
        ("teachers", "student", "dataset", "seeds", "mean_test_acc", "std"),
        [
            (
                "+".join(teacher_archs),
                cfg["student"],
                manifest.name,
                len(seeds),
                f"{aggregate['mean']:.4f}",
                f"{aggregate['std']:.4f}",
            )
        ],
    )
    return 0


def _load_split_file(path, n_nodes: int) -> SplitAssignment:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"split file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"split file is not valid JSON: {err}")
    try:
        split = SplitAssignment.from_dict(payload)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"split file malformed: {err}")
    ids = np.concatenate([split.train, split.val, split.test])
    if not np.array_equal(np.sort(ids), np.arange(n_nodes)):
        raise ConfigError(
            f"split file does not partition the {n_nodes} graph nodes "
            f"(covers {ids.size} ids)"
        )
    return split


def cmd_eval(cfg) -> int:
    ckpt = load_checkpoint(require(cfg, "checkpoint"))
    graph, manifest = load_lcc(require(cfg, "dataset"))
    if ckpt.spec.in_dim != graph.n_features or ckpt.spec.n_classes != graph.n_classes:
        raise ConfigError(
            f"checkpoint expects {ckpt.spec.in_dim} features / {ckpt.spec.n_classes} "
            f"classes, dataset has {graph.n_features} / {graph.n_classes}"
        )
    split = _load_split_file(require(cfg, "split"), graph.n_nodes)
    which = cfg["eval.nodes"]
    if which not in ("train", "val", "test"):
        raise ConfigError(f"eval.nodes must be train, val, or test, got {which!r}")
    model = restore_model(ckpt)
    av = None if ckpt.spec.arch in GRAPH_FREE else normalize_adjacency(graph)
    acc = evaluate(model, av, constant(graph.features), graph.labels,
                   getattr(split, which))
    payload = {
        "kind": "eval",
        "arch": ckpt.spec.arch,
        "dataset": manifest.name,
        "nodes": which,
        "accuracy": acc,
        "checkpoint_val_accuracy": ckpt.val_accuracy,
        "config": cfg,
    }
    if cfg.get("out"):
        atomic_write_json(cfg["out"], payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_bench(cfg) -> int:
    ckpt = load_checkpoint(require(cfg, "checkpoint"))
    graph, manifest = load_lcc(require(cfg, "dataset"))
    model = restore_model(ckpt)
    av = None if ckpt.spec.arch in GRAPH_FREE else normalize_adjacency(graph)
    report = measure_inference(
        model, av, graph.features, reps=cfg["bench.reps"],
        warmup=cfg["bench.warmup"], dataset=manifest.name,
    )
    payload = {"kind": "bench", "config": cfg, "report": report.as_dict()}
    if cfg.get("out"):
        atomic_write_json(cfg["out"], payload)
    print(format_table([report]))
    return 0


def cmd_report(cfg) -> int:
    from .report import save_accuracy_figure, save_latency_figure, write_csv

    metrics_dir = require(cfg, "metrics")
    out_dir = require(cfg, "out")
    if not os.path.isdir(metrics_dir):
        raise ConfigError(f"metrics directory not found: {metrics_dir}")
    os.makedirs(out_dir, exist_ok=True)
    acc_entries, lat_entries, rows = [], [], []
    for name in sorted(os.listdir(metrics_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(metrics_dir, name), encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError:
                continue
        kind = payload.get("kind")
        if kind == "train-teacher":
            label = payload["arch"]
        elif kind == "distill":
            label = "+".join(payload["teachers"]) + "->" + payload["student"]
        elif kind == "bench":
            rep = payload["report"]
            lat_entries.append(
                {"label": rep["model"], "mean_ms": rep["mean_ms"], "std_ms": rep["std_ms"]}
            )
            rows.append(
                {
                    "kind": kind,
                    "label": rep["model"],
                    "dataset": rep["dataset"],
                    "mean": rep["mean_ms"],
                    "std": rep["std_ms"],
                }
            )
            continue
        else:
            continue
        agg = payload["aggregate"]
        acc_entries.append({"label": label, "mean": agg["mean"], "std": agg["std"]})
        rows.append(
            {
                "kind": kind,
                "label": label,
                "dataset": payload["dataset"],
                "mean": agg["mean"],
                "std": agg["std"],
            }
        )
    if not rows:
        raise ConfigError(f"no metrics JSON files found under {metrics_dir}")
    write_csv(os.path.join(out_dir, "summary.csv"), rows,
              ["kind", "label", "dataset", "mean", "std"])
    if acc_entries:
        save_accuracy_figure(os.path.join(out_dir, "accuracy.png"), acc_entries)
    if lat_entries:
        save_latency_figure(os.path.join(out_dir, "latency.png"), lat_entries)
    print_table(
        ("kind", "label", "dataset", "mean", "std"),
        [(r["kind"], r["label"], r["dataset"], f"{r['mean']:.4f}", f"{r['std']:.4f}") for r in rows],
    )
    return 0


COMMANDS = {
    "splits": cmd_splits,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kga",
        description="KAN-hybrid graph networks and multi-teacher amalgamation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config file with dotted keys")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--dataset", help="dataset directory")
        p.add_argument("--out", help="output file or directory")

    p = sub.add_parser("splits", help="write a train/val/test split file")
    common(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train-teacher", help="train one architecture across seeds")
    common(p)
    p.add_argument("--arch")
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("distill", help="amalgamate two teachers into a student")
    common(p)
    p.add_argument("--teachers", help="comma-separated pair, e.g. ksgc,gcn")
    p.add_argument("--student")
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split")

    p = sub.add_parser("bench", help="measure inference latency of a checkpoint")
    common(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("report", help="render CSV and figures from metrics files")
    common(p)
    p.add_argument("--metrics", help="directory of metrics JSON files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (TrainError, NumericError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ConfigError, DatasetError, CheckpointError, ModelError, GraphError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
