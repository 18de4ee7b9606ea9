"""Parser for the pickled citation-network distribution.

A dataset <name> ships eight files: ind.<name>.{x, y, tx, ty, allx, ally,
graph, test.index}. allx/ally cover nodes 0..L-1, tx/ty cover the test ids
listed in test.index (which may leave gaps: those nodes get zero feature
and label rows), and graph maps every node id to its neighbor list.

The files are Python pickles of scipy/numpy objects (latin1 encoding);
only convert artifacts you trust.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .writer import ConvertError

PIECES = ("x", "y", "tx", "ty", "allx", "ally", "graph")

# Published artifact dimensions; conversions abort if these do not match.
EXPECTED = {
    "cora": {"n_nodes": 2708, "n_features": 1433, "n_classes": 7},
    "citeseer": {"n_nodes": 3327, "n_features": 3703, "n_classes": 6},
    "pubmed": {"n_nodes": 19717, "n_features": 500, "n_classes": 3},
}


@dataclass
class CitationRaw:
    name: str
    features: np.ndarray  # n x d, dense
    labels: np.ndarray  # n ints, zero rows of the one-hot become class 0
    edges: np.ndarray  # directed pairs as found in the neighbor lists
    n_classes: int
    unlabeled_nodes: int  # gap nodes with all-zero one-hot rows


def detect_name(directory) -> str:
    names = set()
    try:
        entries = os.listdir(directory)
    except (FileNotFoundError, NotADirectoryError):
        raise ConvertError(f"{directory}: not a directory of raw citation files")
    for entry in entries:
        if entry.startswith("ind.") and entry.endswith(".graph"):
            names.add(entry[len("ind.") : -len(".graph")])
    if len(names) != 1:
        raise ConvertError(
            f"{directory}: expected exactly one ind.<name>.graph file, found {sorted(names)}"
        )
    return names.pop()


def _load_pickle(path):
    try:
        with open(path, "rb") as fh:
            return pickle.load(fh, encoding="latin1")
    except FileNotFoundError:
        raise ConvertError(f"missing raw file {path}")
    except Exception as err:  # corrupt pickle
        raise ConvertError(f"{path}: cannot unpickle ({err})")


def _dense(mat) -> np.ndarray:
    if sp.issparse(mat):
        return np.asarray(mat.todense(), dtype=np.float64)
    return np.asarray(mat, dtype=np.float64)


def load_citation(directory, name: str | None = None, verify: bool = True) -> CitationRaw:
    name = name or detect_name(directory)
    parts = {p: _load_pickle(os.path.join(directory, f"ind.{name}.{p}")) for p in PIECES}
    index_path = os.path.join(directory, f"ind.{name}.test.index")
    try:
        with open(index_path, encoding="utf-8") as fh:
            test_idx = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
    except FileNotFoundError:
        raise ConvertError(f"missing raw file {index_path}")
    if test_idx.size == 0:
        raise ConvertError(f"{index_path}: empty test index")

    allx, ally = _dense(parts["allx"]), np.asarray(parts["ally"], dtype=np.float64)
    tx, ty = _dense(parts["tx"]), np.asarray(parts["ty"], dtype=np.float64)
    if allx.shape[1] != tx.shape[1]:
        raise ConvertError(
            f"feature width mismatch: allx has {allx.shape[1]}, tx has {tx.shape[1]}"
        )
    if ally.shape[1] != ty.shape[1]:
        raise ConvertError(
            f"class count mismatch: ally has {ally.shape[1]}, ty has {ty.shape[1]}"
        )

    # Test rows live at the ids from test.index; the id range may have gaps
    # (isolated nodes) which receive all-zero feature and label rows.
    lo, hi = int(test_idx.min()), int(test_idx.max())
    if lo != allx.shape[0]:
        raise ConvertError(
            f"test ids start at {lo}, expected {allx.shape[0]} (rows of allx)"
        )
    span = hi - lo + 1
    fx = np.zeros((span, allx.shape[1]))
    fy = np.zeros((span, ally.shape[1]))
    if test_idx.size != tx.shape[0]:
        raise ConvertError(
            f"test.index lists {test_idx.size} ids but tx has {tx.shape[0]} rows"
        )
    fx[test_idx - lo] = tx
    fy[test_idx - lo] = ty
    features = np.vstack([allx, fx])
    onehot = np.vstack([ally, fy])
    n = features.shape[0]

    graph = parts["graph"]
    edges = []
    for u, nbrs in graph.items():
        u = int(u)
        if not 0 <= u < n:
            raise ConvertError(f"graph key {u} out of range for {n} nodes")
        for v in nbrs:
            v = int(v)
            if not 0 <= v < n:
                raise ConvertError(f"neighbor {v} of node {u} out of range for {n} nodes")
            edges.append((u, v))

    zero_rows = int(np.sum(onehot.sum(axis=1) == 0))
    labels = np.argmax(onehot, axis=1).astype(np.int64)

    raw = CitationRaw(
        name=name,
        features=features,
        labels=labels,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        n_classes=onehot.shape[1],
        unlabeled_nodes=zero_rows,
    )
    expected = EXPECTED.get(name) if verify else None
    if expected is not None:
        found = {
            "n_nodes": n,
            "n_features": features.shape[1],
            "n_classes": raw.n_classes,
        }
        if found != expected:
            raise ConvertError(
                f"{name}: artifact shape {found} does not match the published "
                f"distribution {expected}"
            )
    return raw
