"""On-disk formats: graphs, datasets, checkpoints and CSV reports.

Everything is text. JSON floats are written with ``repr`` precision, so
reading a file back reproduces the exact doubles that were saved.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dgcnn import Architecture, GraphDataset, ModelParams
from .errors import ParseError, SchemaError, ShapeMismatchError
from .geometry import NetworkGraph

DATASET_SCHEMA = "rfsl.dataset/1"
CHECKPOINT_SCHEMA = "rfsl.checkpoint/1"
GRAPH_SCHEMA = "rfsl.graph/1"


def graph_to_dict(graph: NetworkGraph) -> dict:
    return {
        "schema": GRAPH_SCHEMA,
        "node_ids": list(graph.node_ids),
        "node_positions": graph.node_positions.tolist(),
        "links": [list(link) for link in graph.links],
        "area": list(graph.area),
        "node_height": graph.node_height,
    }


def graph_from_dict(d: dict) -> NetworkGraph:
    _check_schema(d, GRAPH_SCHEMA, "graph")
    try:
        return NetworkGraph(
            np.array(d["node_positions"], dtype=float),
            tuple(tuple(link) for link in d["links"]),
            tuple(d["area"]),
            float(d["node_height"]),
            tuple(d["node_ids"]),
        )
    except KeyError as exc:
        raise ParseError(f"graph document lacks field {exc}") from None


def write_graph(graph: NetworkGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph)) + "\n")


def read_graph(path: str | Path) -> NetworkGraph:
    return graph_from_dict(_load_json(Path(path).read_text(), str(path)))


def _load_json(text: str, where: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _check_schema(d: Any, expected: str, what: str) -> None:
    if not isinstance(d, dict) or d.get("schema") != expected:
        found = d.get("schema") if isinstance(d, dict) else type(d).__name__
        raise SchemaError(f"{what}: expected schema {expected!r}, found {found!r}")


@dataclass(eq=False)
class DatasetFile:
    graph: NetworkGraph
    features: np.ndarray
    labels: np.ndarray
    model_kind: str
    timestamps: np.ndarray
    config: dict = field(default_factory=dict)
    raw_features: np.ndarray | None = None

    def to_graph_dataset(self) -> GraphDataset:
        return GraphDataset(self.graph.adjacency, self.features, self.labels)


def write_dataset(path: str | Path, graph: NetworkGraph, features: np.ndarray, labels: Sequence[int],
                  model_kind: str, config: dict | None = None, timestamps: Sequence[int] | None = None,
                  raw_features: np.ndarray | None = None) -> None:
    features = np.asarray(features, dtype=float)
    shape = (graph.n_nodes, graph.max_degree)
    if features.ndim != 3 or features.shape[1:] != shape:
        raise ShapeMismatchError(f"features must be (samples, {shape[0]}, {shape[1]}); got {features.shape}")
    if timestamps is None:
        timestamps = range(len(features))
    header = {
        "schema": DATASET_SCHEMA,
        "graph": graph_to_dict(graph),
        "model_kind": model_kind,
        "n_records": len(features),
        "config": config or {},
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, (f, y, t) in enumerate(zip(features, labels, timestamps)):
            rec = {"timestamp": int(t), "label": int(y), "features": f.tolist()}
            if raw_features is not None:
                # NaN marks links absent from a window; JSON has no NaN, so use null
                rec["raw"] = [[None if np.isnan(x) else x for x in row] for row in raw_features[i].tolist()]
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path: str | Path) -> DatasetFile:
    where = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{where}: empty file")
    header = _load_json(lines[0], f"{where}:1")
    _check_schema(header, DATASET_SCHEMA, where)
    graph = graph_from_dict(header["graph"])
    shape = (graph.n_nodes, graph.max_degree)
    feats, labels, stamps, raws = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _load_json(line, f"{where}:{lineno}")
        try:
            f = np.array(rec["features"], dtype=float).reshape(-1, shape[1]) if shape[1] else np.zeros((shape[0], 0))
            labels.append(int(rec["label"]))
            stamps.append(int(rec["timestamp"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}:{lineno}: malformed record ({exc})") from None
        if f.shape != shape:
            raise ShapeMismatchError(f"{where}:{lineno}: features are {f.shape}, graph needs {shape}")
        feats.append(f)
        if "raw" in rec:
            raws.append(np.array([[np.nan if x is None else x for x in row] for row in rec["raw"]], dtype=float))
    if header.get("n_records") not in (None, len(feats)):
        raise ParseError(f"{where}: header announces {header['n_records']} records, found {len(feats)}")
    features = np.stack(feats) if feats else np.zeros((0,) + shape)
    raw = np.stack(raws) if raws and len(raws) == len(feats) else None
    return DatasetFile(graph, features, np.array(labels, dtype=np.int64), header.get("model_kind", ""),
                       np.array(stamps, dtype=np.int64), header.get("config", {}), raw)


def checkpoint_to_dict(params: ModelParams) -> dict:
    return {
        "schema": CHECKPOINT_SCHEMA,
        "architecture": params.arch.to_dict(),
        "tensors": {
            name: {"shape": list(params.tensors[name].shape), "data": params.tensors[name].ravel().tolist()}
            for name in params.arch.shapes()
        },
        "feature_mean": params.feature_mean.tolist(),
        "feature_std": params.feature_std.tolist(),
    }


def checkpoint_from_dict(d: dict) -> ModelParams:
    _check_schema(d, CHECKPOINT_SCHEMA, "checkpoint")
    arch = Architecture.from_dict(d["architecture"])
    tensors = {name: np.array(t["data"], dtype=float).reshape(t["shape"]) for name, t in d["tensors"].items()}
    return ModelParams(arch, tensors, np.array(d["feature_mean"], dtype=float), np.array(d["feature_std"], dtype=float))


def write_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_dict(params)) + "\n")


def read_checkpoint(path: str | Path) -> ModelParams:
    return checkpoint_from_dict(_load_json(Path(path).read_text(), str(path)))


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], config_hash: str) -> None:
    """CSV with a leading ``# config_hash=`` comment line and a header row."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ShapeMismatchError(f"row has {len(row)} cells, header has {len(columns)}")
            w.writerow([_cell(v) for v in row])


def read_csv(path: str | Path) -> tuple[str | None, list[dict[str, str]]]:
    """Returns the config hash (if present) and the rows as dicts."""
    with open(path, newline="") as fh:
        text = fh.read().splitlines()
    config_hash = None
    body = []
    for line in text:
        if line.startswith("#"):
            if line.startswith("# config_hash="):
                config_hash = line.split("=", 1)[1].strip()
            continue
        body.append(line)
    return config_hash, list(csv.DictReader(body))
