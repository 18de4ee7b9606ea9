"""Parser for the co-purchase npz distribution (CSR adjacency and attribute
arrays plus integer labels)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .writer import ConvertError

ADJ_KEYS = ("adj_data", "adj_indices", "adj_indptr", "adj_shape")
ATTR_KEYS = ("attr_data", "attr_indices", "attr_indptr", "attr_shape")

# Published photo-subset dimensions; conversions abort if these differ.
EXPECTED = {"n_nodes": 7650, "n_features": 745, "n_classes": 8}


@dataclass
class CoPurchaseRaw:
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray  # directed pairs from the CSR pattern
    n_classes: int


def load_co_purchase(path, expected: dict | None = EXPECTED) -> CoPurchaseRaw:
    try:
        with np.load(path, allow_pickle=True) as loader:
            data = dict(loader)
    except FileNotFoundError:
        raise ConvertError(f"missing raw file {path}")
    except Exception as err:
        raise ConvertError(f"{path}: cannot read npz ({err})")
    for key in ADJ_KEYS + ATTR_KEYS + ("labels",):
        if key not in data:
            raise ConvertError(f"{path}: missing array {key!r}")
    adj = sp.csr_matrix(
        (data["adj_data"], data["adj_indices"], data["adj_indptr"]),
        shape=tuple(data["adj_shape"]),
    )
    attr = sp.csr_matrix(
        (data["attr_data"], data["attr_indices"], data["attr_indptr"]),
        shape=tuple(data["attr_shape"]),
    )
    labels = np.asarray(data["labels"], dtype=np.int64)
    n = adj.shape[0]
    if adj.shape[0] != adj.shape[1]:
        raise ConvertError(f"{path}: adjacency shape {adj.shape} is not square")
    if attr.shape[0] != n or labels.shape != (n,):
        raise ConvertError(
            f"{path}: node counts disagree (adj {n}, attr {attr.shape[0]}, "
            f"labels {labels.shape})"
        )
    n_classes = int(labels.max()) + 1
    if expected is not None:
        found = {"n_nodes": n, "n_features": attr.shape[1], "n_classes": n_classes}
        if found != expected:
            raise ConvertError(
                f"{path}: artifact shape {found} does not match the published "
                f"distribution {expected}"
            )
    coo = adj.tocoo()
    edges = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
    return CoPurchaseRaw(
        features=np.asarray(attr.todense(), dtype=np.float64),
        labels=labels,
        edges=edges,
        n_classes=n_classes,
    )
