"""Windowed tracklet scoring and training-pair assembly."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..core import DescriptionRecord, ScoreRow, ScoreTable, Tracklet
from .features import FeatureStore
from .model import KumParams, PairBatch, predict


def window_starts(n: int, T: int = 8, stride: int = 4) -> list[int]:
    """Start offsets of the windows covering ``n`` frames (last one may be partial)."""
    if n < 1 or T < 1 or stride < 1:
        raise ValueError("need n, T, stride >= 1")
    if n <= T:
        return [0]
    starts = list(range(0, n - T + 1, stride))
    if starts[-1] + T < n:
        starts.append(starts[-1] + stride)
    return starts


def windows(frames: Sequence[int], T: int = 8, stride: int = 4) -> list[list[int]]:
    """Frame lists of length ``T``; a short final window repeats its last frame."""
    frames = list(frames)
    out = []
    for s in window_starts(len(frames), T, stride):
        w = frames[s:s + T]
        out.append(w + [w[-1]] * (T - len(w)))
    return out


def window_arrays(store: FeatureStore, track_id: int, frames: Sequence[int]):
    glob = np.stack([store.global_at(f) for f in frames])
    loc = np.stack([store.local_at(f, track_id) for f in frames])
    return glob, loc


def text_means(store: FeatureStore, descs: Sequence[DescriptionRecord], encoder=None) -> np.ndarray:
    """Token-mean text vectors ``[D, C_t]``; falls back to ``encoder`` for missing records."""
    rows = []
    for d in descs:
        if d.desc_id in store.text:
            tok = store.text[d.desc_id]
        elif encoder is not None:
            tok = encoder.encode(d.text)
        else:
            raise KeyError(f"no text feature for description {d.desc_id}")
        rows.append(np.asarray(tok).mean(axis=0))
    return np.stack(rows)


def _window_set(tracklets: Sequence[Tracklet], store: FeatureStore, T: int, stride: int):
    glob, loc, meta = [], [], []
    for t in tracklets:
        for w in windows(t.frames, T, stride):
            g, l = window_arrays(store, t.track_id, w)
            glob.append(g)
            loc.append(l)
            meta.append((t.track_id, w))
    return np.stack(glob), np.stack(loc), meta


def score_table(p: KumParams, tracklets: Sequence[Tracklet], store: FeatureStore,
                descs: Sequence[DescriptionRecord], T: int = 8, stride: int = 4,
                encoder=None) -> ScoreTable:
    """Score every (tracklet, description) pair window by window."""
    if not tracklets or not descs:
        return ScoreTable([])
    glob, loc, meta = _window_set(tracklets, store, T, stride)
    text = text_means(store, descs, encoder)
    W, D = len(meta), len(descs)
    vis = np.repeat(np.arange(W), D)
    txt = np.tile(np.arange(D), W)
    s = predict(p, PairBatch(glob, loc, text, vis, txt)).reshape(W, D)
    rows = []
    i = 0
    for t in tracklets:
        n = len(window_starts(len(t), T, stride))
        spans = tuple((w[0], w[-1]) for _, w in meta[i:i + n])
        for j, d in enumerate(descs):
            ws = tuple(float(v) for v in s[i:i + n, j])
            rows.append(ScoreRow(t.track_id, d.desc_id, ws, spans, float(np.mean(ws))))
        i += n
    return ScoreTable(rows)


def score_tracklet(p: KumParams, tracklet: Tracklet, store: FeatureStore, desc: DescriptionRecord,
                   T: int = 8, stride: int = 4, encoder=None) -> ScoreRow:
    return score_table(p, [tracklet], store, [desc], T, stride, encoder).rows[0]


def window_label(track_id: int, frames: Sequence[int], desc: DescriptionRecord) -> int:
    """1 when the track is a positive of ``desc`` on at least half of the window's frames."""
    uniq = sorted(set(frames))
    hits = sum(track_id in desc.positives_at(f) for f in uniq)
    return int(2 * hits >= len(uniq))


def build_pairs(tracklets: Sequence[Tracklet], store: FeatureStore, descs: Sequence[DescriptionRecord],
                T: int = 8, stride: int = 4, negatives: int | None = None, seed: int = 0,
                encoder=None) -> PairBatch:
    """Labeled (window, description) pairs from ground-truth tracklets.

    With ``negatives=None`` every pair is kept; otherwise each window keeps
    its positives plus ``negatives`` randomly drawn negative descriptions.
    """
    glob, loc, meta = _window_set(tracklets, store, T, stride)
    text = text_means(store, descs, encoder)
    rng = np.random.default_rng([seed, 2])
    vis, txt, lab = [], [], []
    for w, (tid, frames) in enumerate(meta):
        y = np.array([window_label(tid, frames, d) for d in descs])
        pos = np.nonzero(y)[0]
        neg = np.nonzero(y == 0)[0]
        if negatives is not None and len(neg) > negatives:
            neg = np.sort(rng.choice(neg, size=negatives, replace=False))
        keep = np.concatenate([pos, neg])
        vis += [w] * len(keep)
        txt += keep.tolist()
        lab += y[keep].tolist()
    return PairBatch(glob, loc, text, np.array(vis, dtype=int), np.array(txt, dtype=int),
                     np.array(lab, dtype=float))


def auc(scores, labels) -> float:
    """Rank AUC with ties counted half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels) > 0.5
    pos, neg = s[y], s[~y]
    if not len(pos) or not len(neg):
        raise ValueError("AUC needs both classes")
    r = rankdata(np.concatenate([pos, neg]))
    return float((r[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))
