"""On-disk formats: network JSON, snapshot/fault/feature JSONL, model
checkpoints and report CSVs.

Every artifact starts with a ``format_version`` field; loaders reject
versions they do not understand.  All floats are written with Python's
shortest-roundtrip repr, so identical inputs reproduce byte-identical
files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .features import (
    FeatureField, FeaturizedDataset, FeaturizedSample, GlobalFeatureSpec,
    LocalGraph, StatKind,
)
from .grid import (
    LABEL_NAMES, LABEL_VALUES, Bus, Element, FaultSample, Network, Snapshot,
)

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _check_version(doc: dict, path) -> None:
    v = doc.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {v!r}")


def fingerprint(obj) -> str:
    """Stable short hash of a config-like object."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    payload = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- network

def save_network(network: Network, path, synth_fingerprint: str = "") -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "synth_fingerprint": synth_fingerprint,
        "buses": [dataclasses.asdict(b) for b in network.buses],
        "elements": [dataclasses.asdict(e) for e in network.elements],
    }
    Path(path).write_text(_dump(doc) + "\n")


def load_network(path) -> tuple[Network, str]:
    doc = json.loads(Path(path).read_text())
    _check_version(doc, path)
    network = Network(
        buses=tuple(Bus(**b) for b in doc["buses"]),
        elements=tuple(Element(**e) for e in doc["elements"]),
    )
    return network, doc.get("synth_fingerprint", "")


# -------------------------------------------------------------- snapshots

def save_snapshots(snapshots, path, synth_fingerprint: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(_dump({
            "format_version": FORMAT_VERSION, "kind": "snapshots",
            "synth_fingerprint": synth_fingerprint,
        }) + "\n")
        for s in snapshots:
            fh.write(_dump({
                "day": s.day, "slot": s.slot,
                "bus_states": s.bus_states.tolist(),
                "element_states": s.element_states.tolist(),
            }) + "\n")


def load_snapshots(path) -> tuple[list[Snapshot], str]:
    snapshots = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        _check_version(header, path)
        for line in fh:
            doc = json.loads(line)
            snapshots.append(Snapshot(
                day=doc["day"], slot=doc["slot"],
                bus_states=np.array(doc["bus_states"]),
                element_states=np.array(doc["element_states"]),
            ))
    return snapshots, header.get("synth_fingerprint", "")


# ----------------------------------------------------------------- faults

def save_faults(faults, path, synth_fingerprint: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(_dump({
            "format_version": FORMAT_VERSION, "kind": "faults",
            "synth_fingerprint": synth_fingerprint,
        }) + "\n")
        for f in faults:
            fh.write(_dump({
                "day": f.day, "slot": f.slot, "element_id": f.element_id,
                "label": LABEL_NAMES[f.label] if f.label is not None else None,
            }) + "\n")


def load_faults(path) -> tuple[list[FaultSample], str]:
    faults = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        _check_version(header, path)
        for line in fh:
            doc = json.loads(line)
            label = doc["label"]
            faults.append(FaultSample(
                day=doc["day"], slot=doc["slot"], element_id=doc["element_id"],
                label=LABEL_VALUES[label] if label is not None else None,
            ))
    return faults, header.get("synth_fingerprint", "")


# --------------------------------------------------------------- features

def _spec_to_doc(spec: GlobalFeatureSpec) -> list:
    return [[f.quantity, f.stat.value, f.range_kind, f.region] for f in spec.fields]


def _spec_from_doc(doc: list) -> GlobalFeatureSpec:
    return GlobalFeatureSpec(fields=tuple(
        FeatureField(q, StatKind(s), rk, reg) for q, s, rk, reg in doc
    ))


def save_features(dataset: FeaturizedDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(_dump({
            "format_version": FORMAT_VERSION, "kind": "features",
            "synth_fingerprint": dataset.synth_fingerprint,
            "feature_spec_hash": dataset.feature_spec_hash(),
            "spec": _spec_to_doc(dataset.spec),
            "n_elements": dataset.n_elements,
            "max_nodes": dataset.max_nodes,
        }) + "\n")
        for s in dataset.samples:
            adj = s.local.adjacency
            pairs = [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(adj)))]
            fh.write(_dump({
                "fault_key": s.fault_key,
                "day": s.day, "slot": s.slot, "element_id": s.element_id,
                "label": LABEL_NAMES[s.label] if s.label is not None else None,
                "global_vec": s.global_vec.tolist(),
                "local_adj": pairs,
                "local_feat": s.local.node_features.tolist(),
                "mask": s.local.node_mask.astype(int).tolist(),
            }) + "\n")


def load_features(path) -> FeaturizedDataset:
    samples = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        _check_version(header, path)
        spec = _spec_from_doc(header["spec"])
        max_nodes = header["max_nodes"]
        for line in fh:
            doc = json.loads(line)
            adj = np.zeros((max_nodes, max_nodes))
            for i, j in doc["local_adj"]:
                adj[i, j] = 1.0
                adj[j, i] = 1.0
            label = doc["label"]
            samples.append(FeaturizedSample(
                day=doc["day"], slot=doc["slot"], element_id=doc["element_id"],
                label=LABEL_VALUES[label] if label is not None else None,
                global_vec=np.array(doc["global_vec"]),
                local=LocalGraph(
                    adjacency=adj,
                    node_features=np.array(doc["local_feat"]),
                    node_mask=np.array(doc["mask"], dtype=bool),
                    fault_element_id=doc["element_id"],
                ),
            ))
    return FeaturizedDataset(
        samples=samples, spec=spec, n_elements=header["n_elements"],
        max_nodes=max_nodes, synth_fingerprint=header.get("synth_fingerprint", ""),
    )


# ------------------------------------------------------------- checkpoint

def save_checkpoint(result, path) -> None:
    """TrainResult -> versioned JSON checkpoint (weights in row-major order)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "variant": result.variant,
        "feature_spec_hash": result.feature_spec_hash,
        "threshold": result.threshold,
        "calibration_feasible": result.calibration_feasible,
        "best_epoch": result.best_epoch,
        "config": dataclasses.asdict(result.config),
        "layers": [
            {"name": k, "shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in sorted(result.params.items())
        ],
        "scalers": [
            {"name": k, "shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in sorted(result.scalers.items())
        ],
    }
    Path(path).write_text(_dump(doc) + "\n")


def load_checkpoint(path):
    from .model import ModelConfig, TrainResult

    doc = json.loads(Path(path).read_text())
    _check_version(doc, path)
    cfg_doc = dict(doc["config"])
    cfg_doc["mlp_hidden"] = tuple(cfg_doc.get("mlp_hidden", (200, 100)))
    params = {
        layer["name"]: np.array(layer["data"]).reshape(layer["shape"])
        for layer in doc["layers"]
    }
    scalers = {
        layer["name"]: np.array(layer["data"]).reshape(layer["shape"])
        for layer in doc["scalers"]
    }
    return TrainResult(
        variant=doc["variant"], params=params, scalers=scalers, history=[],
        threshold=doc["threshold"],
        calibration_feasible=doc["calibration_feasible"],
        best_epoch=doc["best_epoch"], config=ModelConfig(**cfg_doc),
        feature_spec_hash=doc["feature_spec_hash"],
    )


# ------------------------------------------------------------------- CSVs

def save_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_kkd", "val_acc"])
        writer.writeheader()
        writer.writerows(history)


def save_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["date", "threshold", "kkd", "ryd", "ysl", "acc"])
        writer.writeheader()
        writer.writerows(rows)
