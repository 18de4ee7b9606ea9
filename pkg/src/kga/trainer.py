"""Optimization loops: Adam with decoupled weight decay, early stopping on
validation accuracy, teacher training, and student distillation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import graphcore as gc
from .amalgam import DistillConfig, TeacherOutputs, loss_hard, loss_mta, loss_total
from .diffcore import NumericError, Parameter, constant
from .graphcore import SparseGraph, SplitAssignment, normalize_adjacency
from .models import GRAPH_FREE, ModelSpec, build_model, model_forward


class TrainError(RuntimeError):
    """Training aborted; carries the epoch where it happened."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 300
    patience: int = 50
    seeds: tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience > self.max_epochs:
            raise ValueError(
                f"patience {self.patience} exceeds max epochs {self.max_epochs}"
            )


@dataclass
class RunResult:
    best_val_accuracy: float
    test_accuracy: float
    epochs_run: int
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        for acc in (self.best_val_accuracy, self.test_accuracy):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self, params):
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(params, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One Adam update with decoupled weight decay; gradients must be finite."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name}")
    state.t += 1
    bc1 = 1.0 - BETA1**state.t
    bc2 = 1.0 - BETA2**state.t
    for p in params:
        m = state.m[p.name]
        v = state.v[p.name]
        m *= BETA1
        m += (1.0 - BETA1) * p.grad
        v *= BETA2
        v += (1.0 - BETA2) * p.grad**2
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def evaluate(model, av, features, labels, node_set) -> float:
    """Fraction of node_set where the argmax prediction matches the label."""
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        raise ValueError("evaluate needs a non-empty node set")
    logits = model_forward(model, av, features, train=False)
    preds = np.argmax(logits.data[node_set], axis=1)
    return float(np.mean(preds == np.asarray(labels)[node_set]))


def snapshot_params(model) -> list[tuple[str, np.ndarray]]:
    return [(p.name, p.data.copy()) for p in model.parameters()]


def load_params(model, items):
    """Restore a snapshot into a freshly built model; names and shapes must match."""
    params = model.parameters()
    if len(params) != len(items):
        raise ValueError(
            f"parameter count mismatch: model has {len(params)}, snapshot has {len(items)}"
        )
    for p, (name, arr) in zip(params, items):
        if p.name != name:
            raise ValueError(f"parameter order mismatch: expected {p.name}, got {name}")
        if p.shape != arr.shape:
            raise ValueError(f"parameter {name} shape {arr.shape} != expected {p.shape}")
        p.data[:] = arr
    return model


def _dropout_rng(seed: int):
    # Distinct stream from the init rng that consumed plain default_rng(seed).
    return np.random.default_rng([seed, 0x9E3779B9])


def _fit(model, av, features, graph, splits, config, loss_fn):
    """Shared loop: full-batch steps, early stop on validation accuracy.

    loss_fn(epoch, train_logits) -> scalar loss tensor. Returns the run
    result and the best-epoch parameter snapshot.
    """
    params = model.parameters()
    state = AdamState(params)
    rng = _dropout_rng(model.spec.seed)
    best_val, best_epoch, best_snap = -1.0, -1, snapshot_params(model)
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        try:
            logits = model_forward(model, av, features, train=True, rng=rng)
            loss = loss_fn(epoch, logits)
            history.append(loss.item())
            for p in params:
                p.zero_grad()
            dc.backward(loss)
            adam_step(params, state, config.learning_rate, config.weight_decay)
        except NumericError as err:
            raise TrainError(f"training diverged: {err}", epoch) from err
        val_acc = evaluate(model, av, features, graph.labels, splits.val)
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_snap = snapshot_params(model)
        elif epoch - best_epoch >= config.patience:
            break
    load_params(model, best_snap)
    test_acc = evaluate(model, av, features, graph.labels, splits.test)
    result = RunResult(best_val, test_acc, epoch, history)
    return result, best_snap


def train_teacher(spec: ModelSpec, graph: SparseGraph, splits: SplitAssignment,
                  config: TrainConfig):
    """Supervised full-batch training with cross-entropy on the train nodes.

    Returns (RunResult, parameter snapshot at the best validation epoch).
    """
    av = None if spec.arch in GRAPH_FREE else normalize_adjacency(graph)
    features = constant(graph.features)
    model = build_model(spec)

    def loss_fn(epoch, logits):
        return loss_hard(logits, graph.labels, splits.train)

    return _fit(model, av, features, graph, splits, config, loss_fn)


def teacher_logits(spec: ModelSpec, snapshot, graph: SparseGraph) -> np.ndarray:
    """Evaluation-mode logits of a restored teacher on the full graph."""
    model = load_params(build_model(spec), snapshot)
    av = None if spec.arch in GRAPH_FREE else normalize_adjacency(graph)
    return model_forward(model, av, constant(graph.features), train=False).data


def distill_student(student_spec: ModelSpec, teachers: list[tuple[ModelSpec, list]],
                    graph: SparseGraph, splits: SplitAssignment,
                    distill: DistillConfig, config: TrainConfig):
    """Train a graph-free student against fused teacher soft targets.

    Teacher logits are computed once in evaluation mode and cached; the
    attention weights over teachers track the student's current outputs,
    recomputed at the start of every epoch. The student's own forward path
    must not touch any sparse-graph kernel.
    """
    if student_spec.arch not in GRAPH_FREE:
        raise ValueError(
            f"students must be graph-free ({', '.join(GRAPH_FREE)}), got {student_spec.arch}"
        )
    outputs = TeacherOutputs(
        [t_spec.arch for t_spec, _ in teachers],
        [teacher_logits(t_spec, snap, graph) for t_spec, snap in teachers],
    )
    model = build_model(student_spec)
    features = constant(graph.features)
    all_nodes = np.arange(graph.n_nodes)
    sparse_ops_before = gc.spmm_counter()

    def loss_fn(epoch, logits):
        current = model_forward(model, None, features, train=False).data
        _, fused = outputs.fused_targets(current, distill.temperature)
        mta = loss_mta(logits, fused, distill.temperature, all_nodes)
        hard = loss_hard(logits, graph.labels, splits.train)
        return loss_total(mta, hard, distill.lam)

    result, snap = _fit(model, None, features, graph, splits, config, loss_fn)
    if gc.spmm_counter() != sparse_ops_before:
        raise TrainError("student forward path touched a sparse-graph kernel", result.epochs_run)
    return result, snap


def summarize(values) -> dict:
    """Mean/std/min/max across seeds."""
    arr = np.asarray(list(values), dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=0)),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "runs": int(arr.size),
    }
