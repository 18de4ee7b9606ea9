"""Neutral dataset writer. The format is the contract with the training
engine: meta.json manifest, edges.txt pairs, features.bin (two uint64 dims
then float32 row-major), labels.txt integers. Output is byte-deterministic:
edges are sorted, JSON keys are sorted."""

from __future__ import annotations

import json
import os

import numpy as np


class ConvertError(ValueError):
    """Raw artifact is missing, malformed, or fails its expected-shape check."""


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to sum to 1; all-zero rows stay zero."""
    features = np.asarray(features, dtype=np.float64)
    sums = features.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0.0, 1.0, sums)
    return features / safe


def canonical_edges(edges, n_nodes: int):
    """Symmetrize, deduplicate, drop self-loops; returns (pairs, dropped_loops).

    pairs come back sorted with u < v, ready for deterministic output.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise ConvertError(
            f"edge endpoint out of range: found id {edges.max()} for {n_nodes} nodes"
        )
    loops = int(np.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0
    edges = edges[edges[:, 0] != edges[:, 1]] if edges.size else edges
    u = np.minimum(edges[:, 0], edges[:, 1])
    v = np.maximum(edges[:, 0], edges[:, 1])
    pairs = np.unique(np.stack([u, v], axis=1), axis=0) if edges.size else edges
    return pairs, loops


def write_neutral(out_dir, name: str, edges: np.ndarray, features: np.ndarray,
                  labels: np.ndarray, n_classes: int, feature_encoding: str) -> dict:
    """Write the four-file dataset directory; returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    n, d = features.shape
    manifest = {
        "name": name,
        "n_nodes": int(n),
        "n_edges": int(edges.shape[0]),
        "n_features": int(d),
        "n_classes": int(n_classes),
        "feature_encoding": feature_encoding,
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "edges.txt"), "w", encoding="utf-8") as fh:
        for u, v in edges:
            fh.write(f"{u} {v}\n")
    header = np.array([n, d], dtype="<u8").tobytes()
    with open(os.path.join(out_dir, "features.bin"), "wb") as fh:
        fh.write(header)
        fh.write(features.astype("<f4").tobytes())
    with open(os.path.join(out_dir, "labels.txt"), "w", encoding="utf-8") as fh:
        for y in labels:
            fh.write(f"{int(y)}\n")
    return manifest
