"""On-disk dataset format, ingestion with validation, and model checkpoints.

Dataset directory layout:
    meta.json      manifest (name, counts, feature encoding tag)
    edges.txt      one "u v" pair per line, 0-indexed, undirected
    features.bin   two little-endian uint64 dims, then float32 row-major data
    labels.txt     one integer per line

Checkpoint file: magic "KGAC", uint32 version, length-prefixed JSON header
(spec snapshot, parameter names/shapes), then one length-prefixed
little-endian float64 blob per parameter.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .graphcore import GraphError, SparseGraph
from .models import ModelSpec, build_model
from .trainer import load_params

CHECKPOINT_MAGIC = b"KGAC"
CHECKPOINT_VERSION = 1


class DatasetError(ValueError):
    """Malformed or inconsistent dataset directory."""


class CheckpointError(ValueError):
    """Malformed, truncated, or mismatched checkpoint file."""


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    n_nodes: int
    n_edges: int
    n_features: int
    n_classes: int
    feature_encoding: str

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "feature_encoding": self.feature_encoding,
        }


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_dataset(directory, graph: SparseGraph, name: str, feature_encoding: str):
    """Write a graph in the neutral on-disk format; returns the manifest."""
    os.makedirs(directory, exist_ok=True)
    manifest = DatasetManifest(
        name, graph.n_nodes, graph.n_edges, graph.n_features, graph.n_classes,
        feature_encoding,
    )
    atomic_write_json(os.path.join(directory, "meta.json"), manifest.as_dict())
    lines = "".join(f"{u} {v}\n" for u, v in graph.edges)
    atomic_write_text(os.path.join(directory, "edges.txt"), lines)
    header = struct.pack("<QQ", graph.n_nodes, graph.n_features)
    payload = graph.features.astype("<f4").tobytes()
    atomic_write_bytes(os.path.join(directory, "features.bin"), header + payload)
    atomic_write_text(
        os.path.join(directory, "labels.txt"),
        "".join(f"{int(y)}\n" for y in graph.labels),
    )
    return manifest


def _read_manifest(path) -> DatasetManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing manifest")
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: invalid JSON ({err})")
    required = ("name", "n_nodes", "n_edges", "n_features", "n_classes", "feature_encoding")
    missing = [key for key in required if key not in raw]
    if missing:
        raise DatasetError(f"{path}: manifest missing keys {missing}")
    return DatasetManifest(*(raw[key] for key in required))


def _read_edges(path, n_nodes: int) -> np.ndarray:
    edges = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise DatasetError(f"{path}:{lineno}: expected 'u v', got {line!r}")
                try:
                    u, v = int(parts[0]), int(parts[1])
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-integer endpoint in {line!r}")
                if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                    raise DatasetError(
                        f"{path}:{lineno}: endpoint out of range for {n_nodes} nodes"
                    )
                if u == v:
                    raise DatasetError(f"{path}:{lineno}: self-loop {u}")
                edges.append((u, v))
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing edge list")
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _read_features(path, n_nodes: int, n_features: int) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing feature matrix")
    if len(blob) < 16:
        raise DatasetError(f"{path}: truncated header")
    rows, cols = struct.unpack("<QQ", blob[:16])
    if rows != n_nodes or cols != n_features:
        raise DatasetError(
            f"{path}: header says {rows}x{cols}, manifest says {n_nodes}x{n_features}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    if data.size != rows * cols:
        raise DatasetError(
            f"{path}: expected {rows * cols} float32 values, found {data.size}"
        )
    return data.reshape(rows, cols).astype(np.float64)


def _read_labels(path, n_nodes: int, n_classes: int) -> np.ndarray:
    labels = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    y = int(line)
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-integer label {line!r}")
                if not 0 <= y < n_classes:
                    raise DatasetError(
                        f"{path}:{lineno}: label {y} outside [0, {n_classes})"
                    )
                labels.append(y)
    except FileNotFoundError:
        raise DatasetError(f"{path}: missing labels")
    if len(labels) != n_nodes:
        raise DatasetError(f"{path}: {len(labels)} labels for {n_nodes} nodes")
    return np.asarray(labels, dtype=np.int64)


def load_dataset(directory):
    """Validated (SparseGraph, DatasetManifest) from a dataset directory."""
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise DatasetError(f"{directory}: not a directory")
    manifest = _read_manifest(os.path.join(directory, "meta.json"))
    edges = _read_edges(os.path.join(directory, "edges.txt"), manifest.n_nodes)
    features = _read_features(
        os.path.join(directory, "features.bin"), manifest.n_nodes, manifest.n_features
    )
    labels = _read_labels(
        os.path.join(directory, "labels.txt"), manifest.n_nodes, manifest.n_classes
    )
    try:
        graph = SparseGraph(manifest.n_nodes, edges, features, labels, manifest.n_classes)
    except GraphError as err:
        raise DatasetError(f"{directory}: {err}")
    if graph.n_edges != manifest.n_edges:
        raise DatasetError(
            f"{directory}: manifest says {manifest.n_edges} edges, "
            f"file holds {graph.n_edges} after merging duplicates"
        )
    return graph, manifest


@dataclass
class Checkpoint:
    """Spec snapshot plus parameter blobs from one training run."""

    spec: ModelSpec
    params: list  # [(name, float64 array)] in model order
    seed: int
    val_accuracy: float
    version: int = CHECKPOINT_VERSION

    @property
    def arch(self) -> str:
        return self.spec.arch


def save_checkpoint(path, ckpt: Checkpoint):
    header = {
        "arch": ckpt.spec.arch,
        "spec": ckpt.spec.as_dict(),
        "seed": ckpt.seed,
        "val_accuracy": ckpt.val_accuracy,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in ckpt.params],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(head)), head]
    for _, arr in ckpt.params:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        parts.append(struct.pack("<Q", arr.size))
        parts.append(blob)
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint")
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    (head_len,) = struct.unpack("<I", take(4, "header length"))
    try:
        header = json.loads(take(head_len, "header"))
        spec = ModelSpec.from_dict(header["spec"])
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise CheckpointError(f"{path}: invalid header ({err})")
    if header["arch"] != spec.arch:
        raise CheckpointError(
            f"{path}: arch tag {header['arch']!r} disagrees with spec {spec.arch!r}"
        )
    params = []
    for meta in header["params"]:
        (count,) = struct.unpack("<Q", take(8, f"{meta['name']} length"))
        shape = tuple(meta["shape"])
        if count != int(np.prod(shape)):
            raise CheckpointError(
                f"{path}: parameter {meta['name']} count {count} != shape {shape}"
            )
        raw = take(8 * count, f"{meta['name']} data")
        params.append((meta["name"], np.frombuffer(raw, dtype="<f8").reshape(shape).copy()))
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return Checkpoint(spec, params, int(header["seed"]), float(header["val_accuracy"]), version)


def restore_model(ckpt: Checkpoint, expect_arch: str | None = None):
    """Rebuild the checkpointed model; optionally require a specific arch."""
    if expect_arch is not None and ckpt.spec.arch != expect_arch:
        raise CheckpointError(
            f"arch tag mismatch: checkpoint holds {ckpt.spec.arch!r}, requested {expect_arch!r}"
        )
    try:
        return load_params(build_model(ckpt.spec), ckpt.params)
    except ValueError as err:
        raise CheckpointError(f"checkpoint disagrees with its spec: {err}")
