"""convert: raw citation / co-purchase artifacts -> neutral dataset directory.

Usage: kga-convert --source {planetoid-citation,amazon-photo} --in PATH --out DIR
Exit codes: 0 success, 1 unexpected runtime failure, 2 bad input or artifact.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from .amazon import EXPECTED as AMZ_EXPECTED
from .amazon import load_co_purchase
from .planetoid import load_citation
from .writer import ConvertError, canonical_edges, row_normalize, write_neutral

KINDS = ("planetoid-citation", "amazon-photo")
ENCODING_TAG = "bag-of-words, rows scaled to sum 1 where nonzero"


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    input_path: str
    output_dir: str
    verify: bool = True
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConvertError(f"unknown source kind {self.kind!r}; choose one of {KINDS}")


def convert(spec: SourceSpec) -> dict:
    """Run one conversion; returns a report of raw vs written counts."""
    if spec.kind == "planetoid-citation":
        raw = load_citation(spec.input_path, name=spec.name, verify=spec.verify)
        name = raw.name
        extra = {"unlabeled_gap_nodes": raw.unlabeled_nodes}
    else:
        raw = load_co_purchase(
            spec.input_path, expected=AMZ_EXPECTED if spec.verify else None
        )
        name = spec.name or "amz-photo"
        extra = {}
    pairs, loops = canonical_edges(raw.edges, raw.features.shape[0])
    features = row_normalize(raw.features)
    manifest = write_neutral(
        spec.output_dir, name, pairs, features, raw.labels, raw.n_classes, ENCODING_TAG
    )
    report = {
        "source": spec.kind,
        "input": str(spec.input_path),
        "output": str(spec.output_dir),
        "raw_directed_entries": int(np.asarray(raw.edges).shape[0]),
        "self_loops_dropped": loops,
        "written_undirected_edges": manifest["n_edges"],
        "manifest": manifest,
        **extra,
    }
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kga-convert",
        description="convert raw graph artifacts to the neutral dataset format",
    )
    parser.add_argument("--source", required=True, choices=KINDS)
    parser.add_argument("--in", dest="input_path", required=True,
                        help="directory of ind.<name>.* files, or the .npz file")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--name", help="override the dataset name in meta.json")
    parser.add_argument("--no-verify", action="store_true",
                        help="skip the published-artifact shape check")
    args = parser.parse_args(argv)
    try:
        spec = SourceSpec(args.source, args.input_path, args.out,
                          verify=not args.no_verify, name=args.name)
        report = convert(spec)
    except ConvertError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # unexpected breakage
        print(f"error: {err}", file=sys.stderr)
        return 1
    for key, value in report.items():
        if key != "manifest":
            print(f"{key}: {value}")
    m = report["manifest"]
    print(
        f"wrote {m['name']}: {m['n_nodes']} nodes, {m['n_edges']} edges, "
        f"{m['n_features']} features, {m['n_classes']} classes"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
