"""SORT-style tracker over the (neural) Kalman filter.

Association is motion only: ``1 - IoU`` between predicted and detected
boxes plus an optional velocity-direction term, solved as an assignment
problem. Optional extras:

* DEL: delete tracks whose predicted center leaves the image;
* VEL: the velocity-direction cost (``lambda_vel > 0``);
* INT: linear interpolation of short gaps in the output tracklets;
* two-stage matching of low-confidence detections (``byte_mode``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import kalman as kf
from .assignment import FORBIDDEN, hungarian
from .core import BBox, Detection, Tracklet, frames_index, iou_matrix


class SequencingError(ValueError):
    """Frames were fed out of order."""


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass
class TrackerConfig:
    iou_gate: float = 0.1
    lambda_vel: float = 0.2
    max_age: int = 30
    n_init: int = 3
    byte_mode: bool = False
    high_thresh: float = 0.6
    low_thresh: float = 0.1
    use_nkf: bool = False
    exit_delete: bool = True
    image_width: float = 1280.0
    image_height: float = 720.0
    interp_max_gap: int = 20
    base_q: float = 0.1
    base_r: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.low_thresh <= self.high_thresh <= 1.0:
            raise ValueError("need 0 <= low_thresh <= high_thresh <= 1")
        if self.max_age < 1 or self.n_init < 1:
            raise ValueError("max_age and n_init must be >= 1")
        if self.interp_max_gap < 0:
            raise ValueError("interp_max_gap must be >= 0")

    @classmethod
    def plain_sort(cls, **kw) -> "TrackerConfig":
        """IoU-only SORT: no DEL, VEL, INT or second stage."""
        base = dict(lambda_vel=0.0, exit_delete=False, interp_max_gap=0, byte_mode=False)
        base.update(kw)
        return cls(**base)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Track:
    track_id: int
    state: kf.FilterState
    last_observed_box: BBox
    hits: int = 1
    age: int = 0
    time_since_update: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    velocity_dir: np.ndarray | None = None
    history: list[tuple[int, BBox]] = field(default_factory=list)
    ever_confirmed: bool = False

    def predicted_box(self) -> BBox:
        return state_box(self.state)

    def mark(self, status: TrackStatus) -> None:
        allowed = {TrackStatus.TENTATIVE: {TrackStatus.CONFIRMED, TrackStatus.DELETED},
                   TrackStatus.CONFIRMED: {TrackStatus.DELETED}, TrackStatus.DELETED: set()}
        if status is self.status:
            return
        if status not in allowed[self.status]:
            raise ValueError(f"illegal transition {self.status.value} -> {status.value}")
        self.status = status
        if status is TrackStatus.CONFIRMED:
            self.ever_confirmed = True


def state_box(state: kf.FilterState) -> BBox:
    cx, cy, a, h = state.mean[:4]
    return BBox.from_xyah((cx, cy, max(a, 1e-3), max(h, 1e-3)))


def velocity_cost(track: Track, det: Detection | BBox) -> float:
    """``1 - cos`` of the angle between the track heading and the direction to ``det``."""
    if track.velocity_dir is None:
        return 0.0
    box = det.bbox if isinstance(det, Detection) else det
    ox, oy = track.last_observed_box.center
    dx, dy = box.center
    d = np.array([dx - ox, dy - oy])
    n = float(np.hypot(*d))
    if n < 1e-12:
        return 0.0
    cos = float(np.dot(track.velocity_dir, d / n))
    return 1.0 - max(-1.0, min(1.0, cos))


def association_cost(tracks: Sequence[Track], dets: Sequence[Detection], cfg: TrackerConfig) -> np.ndarray:
    if not tracks or not dets:
        return np.zeros((len(tracks), len(dets)))
    ious = iou_matrix([t.predicted_box() for t in tracks], [d.bbox for d in dets])
    cost = 1.0 - ious
    if cfg.lambda_vel:
        for i, t in enumerate(tracks):
            for j, d in enumerate(dets):
                cost[i, j] += cfg.lambda_vel * velocity_cost(t, d)
    cost[ious < cfg.iou_gate] = FORBIDDEN
    return cost


def exit_decision(track: Track, cfg: TrackerConfig) -> bool:
    """True when the predicted center is outside ``[0, W) x [0, H)``."""
    cx, cy = track.predicted_box().center
    return not (0.0 <= cx < cfg.image_width and 0.0 <= cy < cfg.image_height)


class Tracker:
    """Frame-serial tracker state for one sequence."""

    def __init__(self, cfg: TrackerConfig | None = None, noise_net: kf.NoiseNet | None = None):
        self.cfg = cfg or TrackerConfig()
        if self.cfg.use_nkf and noise_net is None:
            raise ValueError("use_nkf requires a noise net")
        self.noise = noise_net if self.cfg.use_nkf else kf.FixedNoise(
            kf.NoiseParams.scaled(self.cfg.base_q, self.cfg.base_r))
        self.tracks: list[Track] = []
        self.finished: list[Track] = []
        self.frame = 0
        self._next_id = 1

    # ------------------------------------------------------------ internals
    def _predict(self) -> None:
        for t in self.tracks:
            q = self.noise.process(t.state.mean)
            t.state = kf.kf_predict(t.state, kf.CV_MODEL, np.diag(q))
            t.age += 1
            t.time_since_update += 1

    def _update(self, t: Track, det: Detection) -> None:
        z = det.bbox.to_xyah()
        t.state = kf.kf_update(t.state, z, kf.CV_MODEL, np.diag(self.noise.observation(z)))
        prev = np.array(t.last_observed_box.center)
        cur = np.array(det.bbox.center)
        d = cur - prev
        n = float(np.hypot(*d))
        if n > 1e-12:
            t.velocity_dir = d / n
        t.last_observed_box = det.bbox
        t.hits += 1
        t.time_since_update = 0
        t.history.append((self.frame, state_box(t.state)))
        if t.status is TrackStatus.TENTATIVE and t.hits >= self.cfg.n_init:
            t.mark(TrackStatus.CONFIRMED)

    def _birth(self, det: Detection) -> None:
        state = kf.kf_init(det.bbox.to_xyah())
        t = Track(self._next_id, state, det.bbox)
        self._next_id += 1
        t.history.append((self.frame, det.bbox))
        if self.cfg.n_init <= 1:
            t.mark(TrackStatus.CONFIRMED)
        self.tracks.append(t)

    def _retire(self, t: Track) -> None:
        t.mark(TrackStatus.DELETED)
        self.finished.append(t)

    # ------------------------------------------------------------ public
    def step(self, frame: int, frame_dets: Iterable[Detection]) -> list[tuple[int, BBox]]:
        """Advance to ``frame``; returns ``(id, box)`` of confirmed tracks updated now."""
        if frame <= self.frame:
            raise SequencingError(f"frame {frame} does not follow {self.frame}")
        cfg = self.cfg
        steps = frame - self.frame
        self.frame = frame
        for _ in range(steps):
            self._predict()
        if cfg.exit_delete:
            for t in [t for t in self.tracks if exit_decision(t, cfg)]:
                self.tracks.remove(t)
                self._retire(t)

        dets = list(frame_dets)
        high = [d for d in dets if d.confidence >= cfg.high_thresh]
        low = [d for d in dets if cfg.low_thresh <= d.confidence < cfg.high_thresh]

        matches = hungarian(association_cost(self.tracks, high, cfg))
        for i, j in matches.items():
            self._update(self.tracks[i], high[j])
        left = [t for i, t in enumerate(self.tracks) if i not in matches]
        if cfg.byte_mode and left and low:
            ious = iou_matrix([t.predicted_box() for t in left], [d.bbox for d in low])
            cost = np.where(ious < cfg.iou_gate, FORBIDDEN, 1.0 - ious)
            second = hungarian(cost)
            for i, j in second.items():
                self._update(left[i], low[j])
            left = [t for i, t in enumerate(left) if i not in second]

        for t in left:
            if t.status is TrackStatus.TENTATIVE or t.time_since_update > cfg.max_age:
                self.tracks.remove(t)
                self._retire(t)

        used = set(matches.values())
        for j, d in enumerate(high):
            if j not in used:
                self._birth(d)

        return [(t.track_id, t.history[-1][1]) for t in self.tracks
                if t.status is TrackStatus.CONFIRMED and t.time_since_update == 0]

    def tracklets(self) -> list[Tracklet]:
        """Histories of every track that was ever confirmed, ids ascending."""
        pool = self.finished + self.tracks
        out = [Tracklet(t.track_id, tuple(t.history)) for t in pool if t.ever_confirmed]
        return sorted(out, key=lambda t: t.track_id)


def interpolate(t: Tracklet, max_gap: int) -> Tracklet:
    """Fill frame gaps ``2 <= g <= max_gap`` by per-coordinate linear interpolation."""
    if max_gap < 2 or len(t) < 2:
        return t
    out: list[tuple[int, BBox]] = []
    for (f0, b0), (f1, b1) in zip(t.entries, t.entries[1:]):
        out.append((f0, b0))
        g = f1 - f0
        if 2 <= g <= max_gap:
            p, q = np.array(b0.as_tuple()), np.array(b1.as_tuple())
            for f in range(f0 + 1, f1):
                u = (f - f0) / g
                out.append((f, BBox(*(p + u * (q - p)))))
    out.append(t.entries[-1])
    return Tracklet(t.track_id, tuple(out))


def run_tracker(detections: Sequence[Detection], cfg: TrackerConfig | None = None,
                noise_net: kf.NoiseNet | None = None, n_frames: int | None = None) -> list[Tracklet]:
    """Track a whole sequence, then apply interpolation when enabled."""
    cfg = cfg or TrackerConfig()
    trk = Tracker(cfg, noise_net)
    by_frame = frames_index(detections)
    last = max([n_frames or 0, *by_frame.keys()]) if by_frame or n_frames else 0
    for f in range(1, last + 1):
        trk.step(f, by_frame.get(f, []))
    out = trk.tracklets()
    if cfg.interp_max_gap >= 2:
        out = [interpolate(t, cfg.interp_max_gap) for t in out]
    return out
