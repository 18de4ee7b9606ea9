"""Inference-latency measurement: graph-dependent teachers vs graph-free
students, wall-clock over repeated full-dataset forward passes."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import graphcore as gc
from .diffcore import Tensor, constant
from .models import model_forward

MIN_REPS = 30
DEFAULT_WARMUP = 10


@dataclass(frozen=True)
class BenchReport:
    model: str
    dataset: str
    mean_ms: float
    std_ms: float
    reps: int
    sparse_ops_per_forward: int

    def as_dict(self) -> dict:
        return asdict(self)


def measure_inference(model, av, features, reps: int = 100,
                      warmup: int = DEFAULT_WARMUP, dataset: str = "?") -> BenchReport:
    """Mean/std wall-clock milliseconds of one evaluation-mode forward pass.

    Runs `warmup` untimed passes first (they also charge any one-off
    propagation caches), then counts the sparse-graph operations of a
    single forward before timing `reps` passes.
    """
    if reps < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} repetitions, got {reps}")
    x = features if isinstance(features, Tensor) else constant(features)
    for _ in range(warmup):
        model_forward(model, av, x, train=False)
    gc.spmm_counter_reset()
    model_forward(model, av, x, train=False)
    sparse_ops = gc.spmm_counter()
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        model_forward(model, av, x, train=False)
        times[i] = time.perf_counter() - t0
    return BenchReport(
        model=model.spec.arch,
        dataset=dataset,
        mean_ms=float(times.mean() * 1e3),
        std_ms=float(times.std(ddof=0) * 1e3),
        reps=reps,
        sparse_ops_per_forward=sparse_ops,
    )


def reports_json(reports) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2, sort_keys=True)


def format_table(reports) -> str:
    """Aligned text table, one row per report."""
    headers = ("model", "dataset", "mean_ms", "std_ms", "reps", "sparse_ops")
    rows = [
        (
            r.model,
            r.dataset,
            f"{r.mean_ms:.3f}",
            f"{r.std_ms:.3f}",
            str(r.reps),
            str(r.sparse_ops_per_forward),
        )
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines)
