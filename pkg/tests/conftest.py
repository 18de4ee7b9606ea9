"""Shared synthetic-data helpers: a planted-partition graph with class-aligned
features, small enough for fast runs but learnable by every architecture."""

import numpy as np
import pytest

from kga.graphcore import SparseGraph


def planted_graph(n_per_class=60, n_classes=3, d=10, p_in=0.12, p_out=0.01,
                  signal=0.6, noise=0.25, seed=0) -> SparseGraph:
    """Stochastic block model whose features leak the class label."""
    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), n_per_class)
    prototypes = rng.uniform(-signal, signal, size=(n_classes, d))
    features = prototypes[labels] + rng.normal(0.0, noise, size=(n, d))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if labels[i] == labels[j] else p_out
            if rng.uniform() < p:
                edges.append((i, j))
    # Keep the graph connected: chain any isolated nodes to a neighbor.
    touched = np.zeros(n, dtype=bool)
    for u, v in edges:
        touched[u] = touched[v] = True
    for i in np.flatnonzero(~touched):
        edges.append((i, (i + 1) % n))
    return SparseGraph(n, np.array(edges), features, labels, n_classes)


@pytest.fixture(scope="session")
def sbm_graph():
    return planted_graph(seed=7)
