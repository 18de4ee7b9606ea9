"""Multi-teacher knowledge amalgamation: similarity-driven attention over
teacher logits, fused soft targets, and the distillation loss stack.

Attention weights and fused targets are plain array math (teachers are
frozen; the weights are treated as constants when differentiating). The
losses run through the tape so gradients reach the student.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, constant


@dataclass(frozen=True)
class DistillConfig:
    """One amalgamation run: teacher pair, loss mix, temperature, seed."""

    teachers: tuple[str, str]
    lam: float = 0.5
    temperature: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _row_normalize(z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.where(norms < 1e-12, 1.0, norms)
    return np.where(norms < 1e-12, 0.0, z / safe)


def teacher_similarity(z_student: np.ndarray, z_teacher: np.ndarray) -> float:
    """Mean cosine similarity over all student-row x teacher-row pairs.

    Equals the inner product of the two mean unit-row vectors, so it runs
    in O(n * C) instead of O(n^2 * C). Zero rows contribute zero.
    """
    if z_student.shape != z_teacher.shape:
        raise ValueError(
            f"similarity needs matching shapes, got {z_student.shape} vs {z_teacher.shape}"
        )
    s_mean = _row_normalize(np.asarray(z_student, dtype=np.float64)).mean(axis=0)
    t_mean = _row_normalize(np.asarray(z_teacher, dtype=np.float64)).mean(axis=0)
    return float(s_mean @ t_mean)


def attention_weights(sims) -> np.ndarray:
    """Softmax over per-teacher similarities."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size < 1:
        raise ValueError("attention_weights needs at least one teacher")
    e = np.exp(sims - sims.max())
    return e / e.sum()


def fuse_soft_targets(teacher_logits, alpha, temperature: float) -> np.ndarray:
    """Row-stochastic soft targets from the alpha-weighted teacher logit sum.

    The summed logits are divided by the temperature before the row softmax.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(teacher_logits) != alpha.size:
        raise ValueError("one attention weight per teacher is required")
    mixed = sum(a * np.asarray(z, dtype=np.float64) for a, z in zip(alpha, teacher_logits))
    mixed = mixed / temperature
    mixed -= mixed.max(axis=1, keepdims=True)
    e = np.exp(mixed)
    return e / e.sum(axis=1, keepdims=True)


def loss_mta(student_logits: Tensor, z: np.ndarray, temperature: float, node_set) -> Tensor:
    """Amalgamation loss: temperature-scaled KL of the student's softened
    distribution from the fused targets, averaged over node_set and scaled
    by T^2."""
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        raise ValueError("loss_mta needs a non-empty node set")
    rows = dc.gather_rows(student_logits, node_set)
    p = dc.row_softmax(dc.scale(rows, 1.0 / temperature))
    log_z = constant(np.log(z[node_set]))
    kl = dc.tensor_sum(dc.hadamard(p, dc.add(dc.log(p), dc.scale(log_z, -1.0))))
    return dc.scale(kl, temperature * temperature / node_set.size)


def loss_hard(student_logits: Tensor, labels, node_set) -> Tensor:
    """Mean cross-entropy against the true labels over node_set."""
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        raise ValueError("loss_hard needs a non-empty node set")
    labels = np.asarray(labels, dtype=np.int64)
    rows = dc.gather_rows(student_logits, node_set)
    log_p = dc.log(dc.row_softmax(rows))
    onehot = np.zeros(rows.shape)
    onehot[np.arange(node_set.size), labels[node_set]] = 1.0
    picked = dc.tensor_sum(dc.hadamard(log_p, constant(onehot)))
    return dc.scale(picked, -1.0 / node_set.size)


def loss_total(mta: Tensor, hard: Tensor, lam: float) -> Tensor:
    """Convex combination lambda * mta + (1 - lambda) * hard."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return dc.add(dc.scale(mta, lam), dc.scale(hard, 1.0 - lam))


@dataclass
class TeacherOutputs:
    """Frozen per-teacher logits on the full node set."""

    ids: list[str]
    logits: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        shapes = {z.shape for z in self.logits}
        if len(shapes) > 1:
            raise ValueError(f"teacher logits disagree on shape: {sorted(shapes)}")
        for z in self.logits:
            if not np.all(np.isfinite(z)):
                raise ValueError("teacher logits contain non-finite values")

    def fused_targets(self, z_student: np.ndarray, temperature: float):
        """Attention weights from the current student plus the fused targets."""
        sims = [teacher_similarity(z_student, z) for z in self.logits]
        alpha = attention_weights(sims)
        return alpha, fuse_soft_targets(self.logits, alpha, temperature)
