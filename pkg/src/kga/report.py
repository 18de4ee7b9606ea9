"""Experiment reporting: CSV summaries plus matplotlib figures on disk."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def write_csv(path, rows: list[dict], fieldnames: list[str]):
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)


def save_accuracy_figure(path, entries: list[dict], title: str = "Test accuracy"):
    """Bar chart with std error bars; entries carry label/mean/std."""
    labels = [e["label"] for e in entries]
    means = [e["mean"] for e in entries]
    stds = [e.get("std", 0.0) for e in entries]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels) + 1.5), 3.6))
    ax.bar(range(len(labels)), means, yerr=stds, capsize=3, color="#4878cf")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("accuracy")
    lo = min(means) if means else 0.0
    ax.set_ylim(max(0.0, lo - 0.1), 1.0)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_latency_figure(path, entries: list[dict], title: str = "Inference latency"):
    """Horizontal latency bars in milliseconds, one per model."""
    labels = [e["label"] for e in entries]
    means = [e["mean_ms"] for e in entries]
    stds = [e.get("std_ms", 0.0) for e in entries]
    fig, ax = plt.subplots(figsize=(5.0, max(2.5, 0.5 * len(labels) + 1.0)))
    ax.barh(range(len(labels)), means, xerr=stds, capsize=3, color="#6acc65")
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels)
    ax.set_xlabel("milliseconds per forward pass")
    ax.set_title(title)
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
