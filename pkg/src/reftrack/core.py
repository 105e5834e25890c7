"""Geometry, track and description data model plus the text file formats.

Boxes are stored top-left ``(x, y, w, h)`` in pixels, matching MOT files.
Filters work in center form ``(cx, cy, aspect, h)`` with ``aspect = w / h``.

All reals are written with ``repr`` (shortest round-trip decimal), so any
record set survives ``write -> read`` bit-exactly.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


class ParseError(ValueError):
    """A line of an input file does not match the expected grammar."""

    def __init__(self, message: str, line_no: int | None = None, path: PathLike | None = None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(where + message)


class DuplicateRecordError(ParseError):
    """The same (frame, track id) pair appears twice."""


def fmt_real(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    return repr(x)


@dataclass(frozen=True)
class BBox:
    x_left: float
    y_top: float
    width: float
    height: float

    def __post_init__(self):
        vals = (self.x_left, self.y_top, self.width, self.height)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box must have positive width and height, got {self.width}x{self.height}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x_left + self.width / 2.0, self.y_top + self.height / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_xyah(self) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx, cy, self.width / self.height, self.height], dtype=float)

    @classmethod
    def from_xyah(cls, z: Sequence[float]) -> "BBox":
        cx, cy, a, h = (float(v) for v in z[:4])
        w = a * h
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_left, self.y_top, self.width, self.height)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    ix = min(a.x_left + a.width, b.x_left + b.width) - max(a.x_left, b.x_left)
    iy = min(a.y_top + a.height, b.y_top + b.height) - max(a.y_top, b.y_top)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(boxes_a), len(boxes_b))``."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.array([bx.as_tuple() for bx in boxes_a], dtype=float)
    b = np.array([bx.as_tuple() for bx in boxes_b], dtype=float)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.minimum(1.0, inter / union)


@dataclass(frozen=True)
class Detection:
    """One MOT record. ``track_id`` is -1 for raw detector output."""

    frame: int
    bbox: BBox
    confidence: float = 1.0
    class_id: int = 1
    track_id: int = -1
    visibility: float = 1.0

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame must be >= 1, got {self.frame}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.track_id != -1 and self.track_id < 1:
            raise ValueError(f"track id must be >= 1 or -1, got {self.track_id}")


@dataclass(frozen=True)
class Tracklet:
    track_id: int
    entries: tuple[tuple[int, BBox], ...]

    def __post_init__(self):
        if self.track_id < 1:
            raise ValueError(f"track id must be positive, got {self.track_id}")
        if not self.entries:
            raise ValueError(f"tracklet {self.track_id} has no entries")
        object.__setattr__(self, "entries", tuple((int(f), b) for f, b in self.entries))
        frames = [f for f, _ in self.entries]
        if any(f2 <= f1 for f1, f2 in zip(frames, frames[1:])):
            raise ValueError(f"tracklet {self.track_id} frames not strictly increasing")

    @property
    def frames(self) -> list[int]:
        return [f for f, _ in self.entries]

    @property
    def boxes(self) -> list[BBox]:
        return [b for _, b in self.entries]

    def box_at(self, frame: int) -> BBox | None:
        for f, b in self.entries:
            if f == frame:
                return b
        return None

    def __len__(self) -> int:
        return len(self.entries)


def _parse_int(tok: str, what: str, line_no: int, path) -> int:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line_no, path) from None
    if not v.is_integer():
        raise ParseError(f"{what} must be an integer, got {tok!r}", line_no, path)
    return int(v)


def _parse_real(tok: str, what: str, line_no: int, path) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line_no, path) from None
    if not math.isfinite(v):
        raise ParseError(f"{what} is not finite", line_no, path)
    return v


def parse_mot_line(line: str, line_no: int = 0, path=None) -> Detection:
    toks = [t.strip() for t in line.strip().split(",")]
    if len(toks) < 7 or len(toks) > 10:
        raise ParseError(f"expected 9 comma-separated fields, got {len(toks)}", line_no, path)
    # 7-field lines (no class/visibility) and 10-field MOT16 lines are tolerated on read.
    frame = _parse_int(toks[0], "frame", line_no, path)
    tid = _parse_int(toks[1], "id", line_no, path)
    x, y, w, h = (_parse_real(t, n, line_no, path) for t, n in zip(toks[2:6], "xywh"))
    score = _parse_real(toks[6], "score", line_no, path)
    cls = _parse_int(toks[7], "class", line_no, path) if len(toks) > 7 else 1
    vis = _parse_real(toks[8], "visibility", line_no, path) if len(toks) > 8 else 1.0
    try:
        return Detection(frame, BBox(x, y, w, h), score, cls, tid, vis)
    except ValueError as exc:
        raise ParseError(str(exc), line_no, path) from None


def read_mot(path: PathLike) -> list[Detection]:
    """Read a MOT file into records, in file order.

    Raises:
        ParseError: malformed line (carries the 1-based line number).
        DuplicateRecordError: a track id appears twice in the same frame.
    """
    path = Path(path)
    out: list[Detection] = []
    seen: set[tuple[int, int]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            det = parse_mot_line(line, line_no, path)
            if det.track_id != -1:
                key = (det.frame, det.track_id)
                if key in seen:
                    raise DuplicateRecordError(
                        f"duplicate record for frame {det.frame}, id {det.track_id}", line_no, path)
                seen.add(key)
            out.append(det)
    return out


def assemble_tracklets(records: Iterable[Detection]) -> list[Tracklet]:
    """Group records by track id, sorted by frame; ids ascending."""
    groups: dict[int, list[tuple[int, BBox]]] = defaultdict(list)
    for r in records:
        if r.track_id < 1:
            raise ValueError("raw detections (id -1) cannot form tracklets")
        groups[r.track_id].append((r.frame, r.bbox))
    out = []
    for tid in sorted(groups):
        entries = sorted(groups[tid], key=lambda e: e[0])
        for (f1, _), (f2, _) in zip(entries, entries[1:]):
            if f1 == f2:
                raise DuplicateRecordError(f"duplicate record for frame {f1}, id {tid}")
        out.append(Tracklet(tid, tuple(entries)))
    return out


def read_tracklets(path: PathLike) -> list[Tracklet]:
    return assemble_tracklets(read_mot(path))


def format_mot_line(d: Detection) -> str:
    return ",".join([
        str(int(d.frame)), str(int(d.track_id)),
        *(fmt_real(v) for v in d.bbox.as_tuple()),
        fmt_real(d.confidence), str(int(d.class_id)), fmt_real(d.visibility),
    ])


def tracklets_to_records(tracklets: Iterable[Tracklet]) -> list[Detection]:
    """Flatten tracklets to records sorted by (frame, id), the usual MOT layout."""
    recs = [Detection(f, b, 1.0, 1, t.track_id, 1.0) for t in tracklets for f, b in t.entries]
    recs.sort(key=lambda d: (d.frame, d.track_id))
    return recs


def write_mot(records: Iterable[Detection] | Iterable[Tracklet], path: PathLike) -> None:
    """Write detections or tracklets as MOT lines (LF-terminated)."""
    records = list(records)
    if records and isinstance(records[0], Tracklet):
        ids = [t.track_id for t in records]
        if len(set(ids)) != len(ids):
            raise ValueError("track ids must be unique within one output set")
        records = tracklets_to_records(records)
    lines = [format_mot_line(r) for r in records]
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for ln in lines:
            fh.write(ln + "\n")


def frames_index(records: Iterable[Detection]) -> dict[int, list[Detection]]:
    by_frame: dict[int, list[Detection]] = defaultdict(list)
    for r in records:
        by_frame[r.frame].append(r)
    return dict(by_frame)


# ---------------------------------------------------------------- descriptions

@dataclass(frozen=True)
class DescriptionRecord:
    desc_id: int
    text: tuple[str, ...]
    train_frequency: float | None = None
    positives: Mapping[int, frozenset[int]] | None = None

    def __post_init__(self):
        words = tuple(self.text.split()) if isinstance(self.text, str) else tuple(self.text)
        if not words:
            raise ValueError(f"description {self.desc_id} has empty text")
        object.__setattr__(self, "text", words)
        f = self.train_frequency
        if f is not None and not (0.0 <= f <= 1.0):
            raise ValueError(f"frequency of description {self.desc_id} outside [0, 1]: {f}")
        if self.positives is not None:
            object.__setattr__(self, "positives",
                               {int(k): frozenset(int(i) for i in v) for k, v in self.positives.items()})

    @property
    def sentence(self) -> str:
        return " ".join(self.text)

    def positives_at(self, frame: int) -> frozenset[int]:
        if not self.positives:
            return frozenset()
        return self.positives.get(frame, frozenset())


def read_descriptions(path: PathLike) -> list[DescriptionRecord]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid description file: {exc.msg}", exc.lineno, path) from None
    if not isinstance(raw, list):
        raise ParseError("description file must hold an array", None, path)
    out = []
    for i, obj in enumerate(raw):
        try:
            pos = obj.get("positives")
            out.append(DescriptionRecord(
                int(obj["id"]), str(obj["text"]),
                None if obj.get("frequency") is None else float(obj["frequency"]),
                None if pos is None else {int(k): v for k, v in pos.items()},
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"description #{i}: {exc}", None, path) from None
    return out


def description_to_json(d: DescriptionRecord) -> dict:
    obj: dict = {"id": d.desc_id, "text": d.sentence}
    if d.train_frequency is not None:
        obj["frequency"] = float(d.train_frequency)
    if d.positives is not None:
        obj["positives"] = {str(k): sorted(v) for k, v in sorted(d.positives.items())}
    return obj


def write_descriptions(descs: Iterable[DescriptionRecord], path: PathLike) -> None:
    payload = [description_to_json(d) for d in descs]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- score tables

@dataclass(frozen=True)
class ScoreRow:
    """Score of one (tracklet, description) pair.

    ``windows`` holds ``(first_frame, last_frame)`` per scored window, aligned
    with ``window_scores``.
    """

    track_id: int
    desc_id: int
    window_scores: tuple[float, ...]
    windows: tuple[tuple[int, int], ...] = ()
    aggregate_score: float | None = None

    def __post_init__(self):
        ws = tuple(float(s) for s in self.window_scores)
        if not ws:
            raise ValueError("score row needs at least one window score")
        object.__setattr__(self, "window_scores", ws)
        object.__setattr__(self, "windows", tuple((int(a), int(b)) for a, b in self.windows))
        if self.windows and len(self.windows) != len(ws):
            raise ValueError("windows and window_scores differ in length")
        mean = math.fsum(ws) / len(ws)
        if self.aggregate_score is None:
            object.__setattr__(self, "aggregate_score", mean)
        elif abs(self.aggregate_score - mean) > 1e-9 * max(1.0, abs(mean)):
            raise ValueError("aggregate score must equal the mean of window scores")

    def frame_score(self, frame: int) -> float | None:
        """Mean score of the windows covering ``frame``."""
        hits = [s for (a, b), s in zip(self.windows, self.window_scores) if a <= frame <= b]
        return math.fsum(hits) / len(hits) if hits else None

    def shifted(self, delta: float) -> "ScoreRow":
        ws = tuple(s + delta for s in self.window_scores)
        return ScoreRow(self.track_id, self.desc_id, ws, self.windows, self.aggregate_score + delta)


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)

    def by_desc(self) -> dict[int, list[ScoreRow]]:
        out: dict[int, list[ScoreRow]] = defaultdict(list)
        for r in self.rows:
            out[r.desc_id].append(r)
        return dict(out)

    def __len__(self) -> int:
        return len(self.rows)


def write_scores(table: ScoreTable, path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in table.rows:
            obj = {"track": r.track_id, "desc": r.desc_id, "score": r.aggregate_score,
                   "windows": [[a, b, s] for (a, b), s in zip(r.windows, r.window_scores)]
                   if r.windows else [[0, 0, s] for s in r.window_scores]}
            fh.write(json.dumps(obj) + "\n")


def read_scores(path: PathLike) -> ScoreTable:
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                wins = obj.get("windows") or [[0, 0, obj["score"]]]
                rows.append(ScoreRow(
                    int(obj["track"]), int(obj["desc"]),
                    tuple(float(w[2]) for w in wins),
                    tuple((int(w[0]), int(w[1])) for w in wins) if any(w[0] for w in wins) else (),
                    float(obj["score"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
                raise ParseError(f"bad score record: {exc}", line_no, path) from None
    return ScoreTable(rows)
