"""Feature files: one JSON record per line, ``{frame, track, kind, shape, data}``.

``kind`` is ``global`` (track 0, one per frame), ``local`` (per frame and
track) or ``text`` (frame 0, ``track`` holds the description id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ParseError

KINDS = ("global", "local", "text")


class FeatureGapError(KeyError):
    """A frame of a tracklet has no feature record."""

    def __init__(self, frame: int, track: int):
        self.frame, self.track = frame, track
        super().__init__(f"no local feature for track {track} at frame {frame}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass
class FeatureRecord:
    frame: int
    track: int
    kind: str
    values: np.ndarray

    def to_json(self) -> str:
        arr = np.asarray(self.values, dtype=float)
        return json.dumps({"frame": int(self.frame), "track": int(self.track), "kind": self.kind,
                           "shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]})


def write_feature_file(records, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


@dataclass
class FeatureStore:
    local: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    glob: dict[int, np.ndarray] = field(default_factory=dict)
    text: dict[int, np.ndarray] = field(default_factory=dict)

    def local_at(self, frame: int, track: int) -> np.ndarray:
        try:
            return self.local[(frame, track)]
        except KeyError:
            raise FeatureGapError(frame, track) from None

    def global_at(self, frame: int) -> np.ndarray:
        try:
            return self.glob[frame]
        except KeyError:
            raise FeatureGapError(frame, 0) from None

    def merge(self, other: "FeatureStore") -> "FeatureStore":
        return FeatureStore({**self.local, **other.local}, {**self.glob, **other.glob},
                            {**self.text, **other.text})


def read_feature_file(path) -> FeatureStore:
    path = Path(path)
    store = FeatureStore()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                kind = obj["kind"]
                arr = np.array(obj["data"], dtype=float).reshape(obj["shape"])
                frame, track = int(obj["frame"]), int(obj["track"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad feature record: {exc}", line_no, path) from None
            if kind not in KINDS:
                raise ParseError(f"unknown feature kind {kind!r}", line_no, path)
            if not np.all(np.isfinite(arr)):
                raise ParseError("feature values must be finite", line_no, path)
            if kind == "global":
                store.glob[frame] = arr
            elif kind == "local":
                store.local[(frame, track)] = arr
            else:
                store.text[track] = arr
    return store


def read_features(path) -> FeatureStore:
    """Read one feature file, or every ``*.jsonl`` file of a directory."""
    path = Path(path)
    if path.is_dir():
        store = FeatureStore()
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise FileNotFoundError(f"no feature files in {path}")
        for p in files:
            store = store.merge(read_feature_file(p))
        return store
    return read_feature_file(path)
