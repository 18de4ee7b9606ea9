"""Immutable sparse graphs and the propagation operators shared by all models.

Graphs store deduplicated undirected edges without self-loops; symmetric
normalization adds the self-loops. The sparse-dense product spmm is the
single point where model math touches the graph, and it keeps a call
counter so graph-free inference can be asserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .diffcore import Tensor


class GraphError(ValueError):
    """Invalid graph structure or split request."""


class SparseGraph:
    """Undirected graph with node features and integer labels.

    Edges are stored once as sorted (u, v) pairs with u < v; self-loops are
    rejected (normalization adds them). Instances are immutable by
    convention and safe to share across runs.
    """

    def __init__(self, n_nodes: int, edges, features, labels, n_classes: int):
        self.n_nodes = int(n_nodes)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise GraphError(f"edge endpoint out of range for {self.n_nodes} nodes")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise GraphError("self-loops are not stored; found one in edge list")
        u = np.minimum(edges[:, 0], edges[:, 1])
        v = np.maximum(edges[:, 0], edges[:, 1])
        pairs = np.unique(np.stack([u, v], axis=1), axis=0) if edges.size else edges
        self.edges = pairs
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.shape[0] != self.n_nodes:
            raise GraphError(
                f"feature rows {self.features.shape[0]} != node count {self.n_nodes}"
            )
        if not np.all(np.isfinite(self.features)):
            raise GraphError("feature matrix contains non-finite values")
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.shape != (self.n_nodes,):
            raise GraphError(f"label vector shape {self.labels.shape} != ({self.n_nodes},)")
        self.n_classes = int(n_classes)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise GraphError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def neighbor_csr(self) -> sp.csr_matrix:
        """Boolean adjacency (no self-loops) in CSR form."""
        if self.n_edges == 0:
            return sp.csr_matrix((self.n_nodes, self.n_nodes))
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.ones(rows.size)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))


@dataclass
class NormalizedAdjacency:
    """Symmetric degree-normalized adjacency with self-loops, in CSR form."""

    matrix: sp.csr_matrix
    _transposed: sp.csr_matrix = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def transposed(self) -> sp.csr_matrix:
        if self._transposed is None:
            self._transposed = self.matrix.T.tocsr()
        return self._transposed


_SPARSE_OPS = 0


def spmm_counter_reset():
    global _SPARSE_OPS
    _SPARSE_OPS = 0


def spmm_counter() -> int:
    """Sparse-graph operations executed since the last reset.

    Counts spmm calls and per-edge attention kernels; a graph-free forward
    pass leaves it untouched.
    """
    return _SPARSE_OPS


def count_sparse_op():
    """Bump the sparse-op counter for graph kernels that bypass spmm."""
    global _SPARSE_OPS
    _SPARSE_OPS += 1


def normalize_adjacency(g: SparseGraph) -> NormalizedAdjacency:
    """D^{-1/2} (A + I) D^{-1/2} with degrees taken from A + I."""
    if g.n_nodes < 1:
        raise GraphError("normalize_adjacency: graph has no nodes")
    a_hat = g.neighbor_csr() + sp.identity(g.n_nodes, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return NormalizedAdjacency((d @ a_hat @ d).tocsr())


def largest_connected_component(g: SparseGraph):
    """Induced subgraph on the largest component plus the old->new id map.

    Ties between equal-sized components go to the one containing the
    smallest original node id.
    """
    n_comp, comp = sp.csgraph.connected_components(
        g.neighbor_csr(), directed=False, return_labels=True
    )
    sizes = np.bincount(comp, minlength=n_comp)
    best = np.flatnonzero(sizes == sizes.max())
    if best.size > 1:
        first_node = [np.flatnonzero(comp == c)[0] for c in best]
        keep = best[int(np.argmin(first_node))]
    else:
        keep = best[0]
    old_ids = np.flatnonzero(comp == keep)
    new_of_old = -np.ones(g.n_nodes, dtype=np.int64)
    new_of_old[old_ids] = np.arange(old_ids.size)
    mask = (comp[g.edges[:, 0]] == keep) if g.n_edges else np.zeros(0, dtype=bool)
    kept_edges = new_of_old[g.edges[mask]] if g.n_edges else g.edges
    sub = SparseGraph(
        old_ids.size,
        kept_edges,
        g.features[old_ids],
        g.labels[old_ids],
        g.n_classes,
    )
    id_map = {int(old): int(new_of_old[old]) for old in old_ids}
    return sub, id_map


def spmm(av: NormalizedAdjacency, h: Tensor) -> Tensor:
    """Sparse-dense product av @ h, differentiable in h."""
    global _SPARSE_OPS
    if av.matrix.shape[1] != h.shape[0]:
        raise dc.ShapeError(
            f"spmm: adjacency {av.matrix.shape} does not conform to {h.shape}"
        )
    _SPARSE_OPS += 1
    out = av.matrix @ h.data

    def backward(g):
        return (av.transposed @ g,)

    return dc.apply_op("spmm", (h,), out, backward)


def propagate_power(av: NormalizedAdjacency, x: Tensor, k: int) -> Tensor:
    """k repeated spmm applications; k = 0 returns x unchanged."""
    if k < 0:
        raise GraphError(f"propagate_power: k must be >= 0, got {k}")
    h = x
    for _ in range(k):
        h = spmm(av, h)
    return h


def appnp_propagate(av: NormalizedAdjacency, h0: Tensor, alpha: float, k: int) -> Tensor:
    """Personalized-PageRank iteration h <- (1-alpha) Av h + alpha h0, K times."""
    if not 0.0 < alpha <= 1.0:
        raise GraphError(f"appnp_propagate: alpha must be in (0, 1], got {alpha}")
    if k < 0:
        raise GraphError(f"appnp_propagate: K must be >= 0, got {k}")
    if alpha == 1.0:
        return h0
    h = h0
    teleport = dc.scale(h0, alpha)
    for _ in range(k):
        h = dc.add(dc.scale(spmm(av, h), 1.0 - alpha), teleport)
    return h


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/val/test node-id sets covering the whole graph."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SplitAssignment":
        return SplitAssignment(
            np.asarray(d["train"], dtype=np.int64),
            np.asarray(d["val"], dtype=np.int64),
            np.asarray(d["test"], dtype=np.int64),
            int(d["seed"]),
        )


TRAIN_PER_CLASS = 20
VAL_PER_CLASS = 30


def make_splits(labels, n_classes: int, seed: int) -> SplitAssignment:
    """Sample 20 train and 30 val nodes per class; the rest become test."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    need = TRAIN_PER_CLASS + VAL_PER_CLASS
    train, val = [], []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if members.size < need:
            raise GraphError(
                f"class {c} has {members.size} nodes, needs at least {need} for a split"
            )
        picked = rng.choice(members, size=need, replace=False)
        train.append(picked[:TRAIN_PER_CLASS])
        val.append(picked[TRAIN_PER_CLASS:])
    train = np.sort(np.concatenate(train))
    val = np.sort(np.concatenate(val))
    taken = np.zeros(labels.size, dtype=bool)
    taken[train] = True
    taken[val] = True
    test = np.flatnonzero(~taken)
    return SplitAssignment(train, val, test, seed)
