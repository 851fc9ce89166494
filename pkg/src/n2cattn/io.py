"""JSON graph loading and report serialization.

Graph files look like::

    {"num_nodes": 4, "edges": [[0, 1], [1, 2]], "features": [[...], ...]}

``features`` is optional; when missing each node gets a one-hot encoding of
its degree (degrees above 63 share the last bucket).
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch
from .graph import Graph, build_graph

MAX_DEGREE_BUCKETS = 64


def degree_onehot(degrees, max_buckets: int = MAX_DEGREE_BUCKETS) -> np.ndarray:
    degrees = np.asarray(degrees, dtype=np.int64)
    width = min(int(degrees.max(initial=0)) + 1, max_buckets)
    X = np.zeros((len(degrees), width))
    X[np.arange(len(degrees)), np.minimum(degrees, width - 1)] = 1.0
    return X


def graph_from_dict(data) -> Graph:
    if not isinstance(data, dict) or "num_nodes" not in data:
        raise ParseError("graph JSON must be an object with a 'num_nodes' field")
    try:
        n = int(data["num_nodes"])
        edges = np.asarray(data.get("edges", []), dtype=np.int64).reshape(-1, 2)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed graph JSON: {exc}") from exc
    if n < 0:
        raise ParseError("num_nodes must be nonnegative")
    feats = data.get("features")
    if feats is None:
        g = build_graph(edges, n)
        return build_graph(edges, n, degree_onehot(g.degrees()))
    try:
        feats = np.asarray(feats, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ShapeMismatch(f"features are not a rectangular numeric matrix: {exc}") from exc
    if n == 0 and feats.size == 0:
        feats = feats.reshape(0, 1)
    return build_graph(edges, n, feats)


def load_graph_json(path) -> Graph:
    try:
        text = Path(path).read_text()
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return graph_from_dict(data)


def graph_to_dict(g: Graph) -> dict:
    return {
        "num_nodes": g.num_nodes,
        "edges": g.edge_list().tolist(),
        "features": g.features.tolist(),
    }


def _encode(obj, out):
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        out.append(format(x, ".17g") if math.isfinite(x) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, v in enumerate(items):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    out = []
    _encode(obj, out)
    return "".join(out)


def write_report(obj, path=None) -> str:
    text = dumps(obj) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
