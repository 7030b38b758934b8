"""Point-cloud ingestion and structured result documents.

Input point clouds are delimiter-separated tables with a header line
naming the columns: coordinates ``x1..xd`` (aliases ``x``, ``y``, ``z``
accepted for d <= 3), an optional ``weight`` column (uniform weights
otherwise), and optional label columns ``label1..labelm`` (alias
``label``). Lines starting with ``#`` are comments.

Result documents are JSON with a format-version tag. Floats are written
with Python's shortest round-tripping representation (at most 17
significant digits), so saving and loading reproduces every number
bit-exactly.
"""

from __future__ import annotations

import json
import os
from typing import Optional, Tuple, Union

import numpy as np

from .measures import DiscreteMeasure, LabelledSpace, MetricMeasureSpace, TransportPlan
from .transfer import ClusterNode, SpectralPartition, TransferOperator

__all__ = [
    "FORMAT_VERSION",
    "load_point_cloud",
    "save_result",
    "load_result",
    "result_document",
    "plan_document",
    "plan_from_document",
    "partition_document",
    "tree_document",
    "save_table",
    "load_table",
]

FORMAT_VERSION = "1"


class PointCloudError(ValueError):
    """Malformed point-cloud file; message carries the offending line number."""


def _split_header(line: str, delimiter: Optional[str]):
    if delimiter is None:
        delimiter = "," if "," in line else None  # None -> whitespace split
    fields = [t.strip() for t in (line.split(delimiter) if delimiter else line.split())]
    return [f for f in fields if f], delimiter


_COORD_ALIASES = {"x": 0, "y": 1, "z": 2}


def _classify_columns(names, path):
    coords, weight_col, labels = {}, None, {}
    for idx, name in enumerate(names):
        low = name.lower()
        if low == "weight":
            if weight_col is not None:
                raise PointCloudError(f"{path}: duplicate weight column in header")
            weight_col = idx
        elif low in _COORD_ALIASES:
            coords[_COORD_ALIASES[low]] = idx
        elif low.startswith("x") and low[1:].isdigit():
            coords[int(low[1:]) - 1] = idx
        elif low == "label":
            labels[0] = idx
        elif low.startswith("label") and low[5:].isdigit():
            labels[int(low[5:]) - 1] = idx
        else:
            raise PointCloudError(
                f"{path}: unknown column {name!r}; expected x1..xd, weight, label1..labelm"
            )
    if not coords or sorted(coords) != list(range(len(coords))):
        raise PointCloudError(f"{path}: coordinate columns must be x1..xd without gaps")
    if labels and sorted(labels) != list(range(len(labels))):
        raise PointCloudError(f"{path}: label columns must be label1..labelm without gaps")
    return coords, weight_col, labels


def load_point_cloud(path, delimiter: Optional[str] = None) -> Union[DiscreteMeasure, LabelledSpace]:
    """Parse a point-cloud table into a measure (or labelled space when labelled).

    Weights default to uniform when the column is absent; NaN or negative
    weights and malformed rows are rejected with the line number.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"point-cloud file not found: {path}")
    rows = []
    header = None
    header_meta = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header, delimiter = _split_header(line, delimiter)
                header_meta = _classify_columns(header, path)
                continue
            fields = [t.strip() for t in (line.split(delimiter) if delimiter else line.split())]
            fields = [f for f in fields if f]
            if len(fields) != len(header):
                raise PointCloudError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}"
                )
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise PointCloudError(f"{path}:{lineno}: {exc}") from None
            rows.append((lineno, values))
    if header is None or not rows:
        raise PointCloudError(f"{path}: no data rows")

    coords, weight_col, labels = header_meta
    dim = len(coords)
    points = np.array([[vals[coords[d]] for d in range(dim)] for _, vals in rows])
    if not np.all(np.isfinite(points)):
        bad = rows[int(np.argwhere(~np.isfinite(points))[0][0])][0]
        raise PointCloudError(f"{path}:{bad}: non-finite coordinate")

    if weight_col is None:
        weights = np.full(len(rows), 1.0 / len(rows))
    else:
        weights = np.array([vals[weight_col] for _, vals in rows])
        for (lineno, _), w in zip(rows, weights):
            if not np.isfinite(w):
                raise PointCloudError(f"{path}:{lineno}: weight is not finite")
            if w < 0:
                raise PointCloudError(f"{path}:{lineno}: negative weight {w!r}")

    measure = DiscreteMeasure(points, weights)
    if not labels:
        return measure
    label_dim = len(labels)
    label_arr = np.array([[vals[labels[d]] for d in range(label_dim)] for _, vals in rows])
    return LabelledSpace(MetricMeasureSpace.from_points(points, weights), label_arr)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return {"shape": list(obj.shape), "data": [float(v) for v in obj.ravel()]}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def array_from_document(obj) -> np.ndarray:
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])


def plan_document(plan: TransportPlan, include_potentials: bool = True) -> dict:
    doc = {
        "shape": list(plan.shape),
        "data": [float(v) for v in plan.coupling.ravel()],
        "source_weights": _jsonify(plan.source_weights),
        "target_weights": _jsonify(plan.target_weights),
        "epsilon": float(plan.epsilon),
        "kappa": None if plan.kappa is None else float(plan.kappa),
        "iterations": int(plan.iterations),
        "converged_residual": float(plan.converged_residual),
        "converged": bool(plan.converged),
        "oscillating": bool(plan.oscillating),
        "cost_epsilon": None if plan.cost_epsilon is None else float(plan.cost_epsilon),
    }
    if include_potentials and plan.potentials is not None:
        f, g = plan.potentials
        doc["potentials"] = {"f": _jsonify(f), "g": _jsonify(g)}
    return doc


def plan_from_document(doc: dict) -> TransportPlan:
    coupling = np.array(doc["data"], dtype=float).reshape(doc["shape"])
    pots = None
    if doc.get("potentials"):
        pots = (
            array_from_document(doc["potentials"]["f"]),
            array_from_document(doc["potentials"]["g"]),
        )
    return TransportPlan(
        coupling,
        array_from_document(doc["source_weights"]),
        array_from_document(doc["target_weights"]),
        epsilon=doc["epsilon"],
        kappa=doc["kappa"],
        iterations=doc["iterations"],
        converged_residual=doc["converged_residual"],
        converged=doc["converged"],
        oscillating=doc.get("oscillating", False),
        cost_epsilon=doc.get("cost_epsilon"),
        potentials=pots,
    )


def partition_document(partition: SpectralPartition) -> dict:
    return {
        "phi": _jsonify(partition.phi),
        "psi": _jsonify(partition.psi),
        "sigma": float(partition.sigma),
        "sigma1": float(partition.sigma1),
        "source_partition": [int(v) for v in partition.source_partition],
        "target_partition": [int(v) for v in partition.target_partition],
        "mass_balance": _jsonify(partition.mass_balance),
        "coherence_residual": _jsonify(partition.coherence_residual),
        "shape_scores": None if partition.shape_scores is None else _jsonify(partition.shape_scores),
        "warnings": list(partition.warnings),
    }


def tree_document(node: ClusterNode) -> dict:
    return {
        "source_indices": [int(i) for i in node.source_indices],
        "target_indices": [int(i) for i in node.target_indices],
        "depth": int(node.depth),
        "shape_score": float(node.shape_score),
        "stopped": node.stopped,
        "partition": None if node.partition is None else partition_document(node.partition),
        "children": [tree_document(c) for c in node.children],
    }


def result_document(
    kind: str,
    config: dict,
    plan: Optional[TransportPlan] = None,
    operator: Optional[TransferOperator] = None,
    partition: Optional[SpectralPartition] = None,
    tree: Optional[ClusterNode] = None,
    summary: Optional[dict] = None,
    trace_summary: Optional[dict] = None,
    table: Optional[list] = None,
) -> dict:
    """Assemble the canonical result document for one run."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": _jsonify(config),
        "summary": _jsonify(summary or {}),
        "plan": None if plan is None else plan_document(plan),
        "kernel": None if operator is None else _jsonify(operator.kernel),
        "operator_matrix": None if operator is None else _jsonify(operator.operator_matrix),
        "singular_values": None
        if partition is None
        else [float(partition.sigma1), float(partition.sigma)],
        "partitions": None if partition is None else partition_document(partition),
        "tree": None if tree is None else tree_document(tree),
        "trace_summary": _jsonify(trace_summary) if trace_summary else None,
        "table": _jsonify(table) if table is not None else None,
    }
    return doc


def save_result(doc: dict, path) -> None:
    """Write a result document as JSON (shortest round-tripping float form)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonify(doc), fh, indent=1)
        fh.write("\n")


def load_result(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"result file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "format_version" not in doc:
        raise ValueError(f"{path}: not a result document (missing format_version)")
    return doc


def save_table(path, rows, config: Optional[dict] = None) -> None:
    """CSV table with the full run config echoed as '# key=value' header lines."""
    if not rows:
        raise ValueError("cannot save an empty table")
    columns = list(rows[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (config or {}).items():
            fh.write(f"# {key}={json.dumps(_jsonify(value))}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(row[c])) if isinstance(row[c], (float, np.floating))
                              else str(row[c]) for c in columns) + "\n")


def load_table(path) -> Tuple[dict, list]:
    """Read back a table written by :func:`save_table`: (config, rows)."""
    config = {}
    rows = []
    columns = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                config[key.strip()] = json.loads(value)
                continue
            parts = line.split(",")
            if columns is None:
                columns = parts
                continue
            row = {}
            for name, field in zip(columns, parts):
                try:
                    row[name] = float(field)
                except ValueError:
                    row[name] = field
            rows.append(row)
    return config, rows
