"""Weights file: JSON with a header and ordered ``{name, shape, data}`` entries."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import ParseError


def dump_weights(named, path, header: dict | None = None) -> None:
    entries = []
    for name, t in named:
        arr = np.asarray(getattr(t, "data", t), dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} is not finite")
        entries.append({"name": name, "shape": list(arr.shape),
                        "data": [float(v) for v in arr.reshape(-1)]})
    payload = {"header": header or {}, "layers": entries}
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_weights(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        out = []
        for e in payload["layers"]:
            arr = np.array(e["data"], dtype=float).reshape(e["shape"])
            out.append((str(e["name"]), arr))
        return dict(payload.get("header", {})), out
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad weights file: {exc}", None, path) from None


def assign_weights(named, loaded: list[tuple[str, np.ndarray]]) -> None:
    """Copy loaded arrays into the tensors of ``named``, matching by name."""
    table = dict(loaded)
    for name, t in named:
        if name not in table:
            raise ValueError(f"weights file lacks parameter {name}")
        arr = table[name]
        if arr.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
        t.data[...] = arr
