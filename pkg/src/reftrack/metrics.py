"""Tracking metrics: CLEAR MOTA, IDF1 and the HOTA family.

All metrics take ground truth and predictions as lists of ``Tracklet``.
Per-frame matching is an exact assignment over IoU with pairs below the
threshold forbidden. Referring evaluation restricts the ground truth to a
description's positives and the predictions to tracklets whose score
passes a threshold, then averages over descriptions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assignment import FORBIDDEN, hungarian
from .core import BBox, DescriptionRecord, ScoreTable, Tracklet, iou_matrix

ALPHAS = np.round(np.linspace(0.05, 0.95, 19), 10)


class UndefinedMetricError(ValueError):
    """The ground truth is empty, so the metric has no denominator."""


@dataclass
class EvalResult:
    hota: float = 0.0
    deta: float = 0.0
    assa: float = 0.0
    detre: float = 0.0
    detpr: float = 0.0
    assre: float = 0.0
    asspr: float = 0.0
    mota: float = 0.0
    idf1: float = 0.0
    counts: dict = field(default_factory=dict)

    METRICS = ("hota", "deta", "assa", "detre", "detpr", "assre", "asspr", "mota", "idf1")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRICS}

    def report(self, keys: Sequence[str] | None = None) -> str:
        keys = keys or self.METRICS
        return "\n".join(f"{k}={getattr(self, k)!r}" for k in keys)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# --------------------------------------------------------------------- frames
@dataclass
class _Frame:
    gt_ids: list[int]
    pred_ids: list[int]
    ious: np.ndarray


def _by_frame(tracklets: Sequence[Tracklet]) -> dict[int, list[tuple[int, BBox]]]:
    out: dict[int, list[tuple[int, BBox]]] = {}
    for t in tracklets:
        for f, b in t.entries:
            out.setdefault(f, []).append((t.track_id, b))
    return out


def _frames(gt: Sequence[Tracklet], pred: Sequence[Tracklet]) -> list[_Frame]:
    g, p = _by_frame(gt), _by_frame(pred)
    frames = []
    for f in sorted(set(g) | set(p)):
        ge, pe = g.get(f, []), p.get(f, [])
        ious = iou_matrix([b for _, b in ge], [b for _, b in pe])
        frames.append(_Frame([i for i, _ in ge], [i for i, _ in pe], ious))
    return frames


def _gt_count(gt: Sequence[Tracklet]) -> int:
    n = sum(len(t) for t in gt)
    if n == 0:
        raise UndefinedMetricError("ground truth contains no boxes")
    return n


def _match(ious: np.ndarray, alpha: float, bonus: np.ndarray | None = None) -> dict[int, int]:
    if ious.size == 0:
        return {}
    cost = 1.0 - ious
    if bonus is not None:
        cost = cost - bonus
    cost = np.where(ious >= alpha, cost, FORBIDDEN)
    return hungarian(cost)


def match_frame(gt_boxes: Sequence[BBox], pred_boxes: Sequence[BBox], alpha: float) -> dict[int, int]:
    """Maximum-cardinality, IoU-maximizing matching ``gt index -> pred index`` at IoU >= alpha."""
    return _match(iou_matrix(list(gt_boxes), list(pred_boxes)), alpha)


# --------------------------------------------------------------------- CLEAR
def mota_counts(gt: Sequence[Tracklet], pred: Sequence[Tracklet], alpha: float = 0.5) -> dict:
    n_gt = _gt_count(gt)
    tp = fp = idsw = 0
    prev: dict[int, int] = {}
    for fr in _frames(gt, pred):
        bonus = None
        if prev and fr.ious.size:
            bonus = np.zeros_like(fr.ious)
            col = {pid: j for j, pid in enumerate(fr.pred_ids)}
            for i, gid in enumerate(fr.gt_ids):
                j = col.get(prev.get(gid, -10**9))
                if j is not None:
                    bonus[i, j] = 2.0   # keep established correspondences first
        m = _match(fr.ious, alpha, bonus)
        cur = {fr.gt_ids[i]: fr.pred_ids[j] for i, j in m.items()}
        # a switch needs a match in both consecutive frames
        idsw += sum(1 for gid, pid in cur.items() if gid in prev and prev[gid] != pid)
        tp += len(m)
        fp += len(fr.pred_ids) - len(m)
        prev = cur
    fn = n_gt - tp
    return {"gt": n_gt, "tp": tp, "fp": fp, "fn": fn, "idsw": idsw}


def mota(gt: Sequence[Tracklet], pred: Sequence[Tracklet], alpha: float = 0.5) -> float:
    c = mota_counts(gt, pred, alpha)
    return 1.0 - (c["fn"] + c["fp"] + c["idsw"]) / c["gt"]


def idf1_counts(gt: Sequence[Tracklet], pred: Sequence[Tracklet], alpha: float = 0.5) -> dict:
    n_gt = _gt_count(gt)
    n_pred = sum(len(t) for t in pred)
    gids = sorted({t.track_id for t in gt})
    pids = sorted({t.track_id for t in pred})
    gi = {g: i for i, g in enumerate(gids)}
    pi = {p: j for j, p in enumerate(pids)}
    overlap = np.zeros((len(gids), len(pids)))
    for fr in _frames(gt, pred):
        if fr.ious.size:
            for i, j in zip(*np.nonzero(fr.ious >= alpha)):
                overlap[gi[fr.gt_ids[i]], pi[fr.pred_ids[j]]] += 1
    idtp = 0
    if overlap.size and overlap.max() > 0:
        cost = np.where(overlap > 0, -overlap, FORBIDDEN)
        idtp = int(sum(overlap[i, j] for i, j in hungarian(cost).items()))
    return {"idtp": idtp, "idfn": n_gt - idtp, "idfp": n_pred - idtp}


def idf1(gt: Sequence[Tracklet], pred: Sequence[Tracklet], alpha: float = 0.5) -> float:
    c = idf1_counts(gt, pred, alpha)
    return 2 * c["idtp"] / (2 * c["idtp"] + c["idfp"] + c["idfn"])


# --------------------------------------------------------------------- HOTA
def _hota_alpha(frames: list[_Frame], gt_len: dict[int, int], pred_len: dict[int, int],
                alpha: float) -> dict:
    pair: dict[tuple[int, int], int] = {}
    tp = 0
    for fr in frames:
        for i, j in _match(fr.ious, alpha).items():
            key = (fr.gt_ids[i], fr.pred_ids[j])
            pair[key] = pair.get(key, 0) + 1
            tp += 1
    n_gt = sum(gt_len.values())
    n_pred = sum(pred_len.values())
    fn, fp = n_gt - tp, n_pred - tp
    a = re = pr = 0.0
    for (g, p), c in pair.items():
        # each pair's score is counted once per TP in that pair
        a += c * c / (gt_len[g] + pred_len[p] - c)
        re += c * c / gt_len[g]
        pr += c * c / pred_len[p]
    assa, assre, asspr = (x / max(tp, 1) for x in (a, re, pr))
    deta = tp / max(tp + fn + fp, 1)
    detre = tp / max(tp + fn, 1)
    detpr = tp / max(tp + fp, 1)
    return dict(hota=float(np.sqrt(deta * assa)), deta=deta, assa=assa, detre=detre,
                detpr=detpr, assre=assre, asspr=asspr, tp=tp, fn=fn, fp=fp)


def hota(gt: Sequence[Tracklet], pred: Sequence[Tracklet], alphas: Sequence[float] = ALPHAS) -> EvalResult:
    """HOTA and its sub-scores averaged over the IoU thresholds ``alphas``."""
    _gt_count(gt)
    frames = _frames(gt, pred)
    gt_len = {t.track_id: len(t) for t in gt}
    pred_len = {t.track_id: len(t) for t in pred}
    per = [_hota_alpha(frames, gt_len, pred_len, float(a)) for a in alphas]
    res = EvalResult()
    for k in ("hota", "deta", "assa", "detre", "detpr", "assre", "asspr"):
        setattr(res, k, float(np.mean([d[k] for d in per])))
    res.counts = {f"{a:.2f}": {k: per[n][k] for k in ("tp", "fn", "fp")} for n, a in enumerate(alphas)}
    return res


def evaluate(gt: Sequence[Tracklet], pred: Sequence[Tracklet], metrics: Sequence[str] = ("hota", "mota", "idf1"),
             alpha: float = 0.5) -> EvalResult:
    res = hota(gt, pred) if "hota" in metrics else EvalResult()
    if "mota" in metrics:
        c = mota_counts(gt, pred, alpha)
        res.mota = 1.0 - (c["fn"] + c["fp"] + c["idsw"]) / c["gt"]
        res.counts["clear"] = c
    if "idf1" in metrics:
        c = idf1_counts(gt, pred, alpha)
        res.idf1 = 2 * c["idtp"] / (2 * c["idtp"] + c["idfp"] + c["idfn"])
        res.counts["identity"] = c
    return res


# --------------------------------------------------------------------- oracle
def oracle_revise(pred: Sequence[Tracklet], gt: Sequence[Tracklet], alpha: float = 0.5) -> list[Tracklet]:
    """Snap matched predicted boxes onto their ground truth; ids and box counts untouched."""
    g = _by_frame(gt)
    fixed: dict[tuple[int, int], BBox] = {}
    for f, pe in _by_frame(pred).items():
        ge = g.get(f, [])
        for i, j in match_frame([b for _, b in ge], [b for _, b in pe], alpha).items():
            fixed[(f, pe[j][0])] = ge[i][1]
    return [Tracklet(t.track_id, tuple((f, fixed.get((f, t.track_id), b)) for f, b in t.entries))
            for t in pred]


# --------------------------------------------------------------------- referring
def positives_gt(gt: Sequence[Tracklet], desc: DescriptionRecord) -> list[Tracklet]:
    """Ground truth restricted to the description's positive (frame, id) pairs."""
    out = []
    for t in gt:
        entries = tuple((f, b) for f, b in t.entries if t.track_id in desc.positives_at(f))
        if entries:
            out.append(Tracklet(t.track_id, entries))
    return out


def selected_predictions(pred: Sequence[Tracklet], table: ScoreTable, desc_id: int, threshold: float,
                         granularity: str = "tracklet") -> list[Tracklet]:
    """Predicted tracklets (or frames, with ``granularity='frame'``) scoring at or above ``threshold``."""
    if granularity not in ("tracklet", "frame"):
        raise ValueError(f"unknown granularity {granularity!r}")
    rows = {r.track_id: r for r in table.by_desc().get(desc_id, [])}
    out = []
    for t in pred:
        r = rows.get(t.track_id)
        if r is None:
            continue
        if granularity == "tracklet":
            if r.aggregate_score >= threshold:
                out.append(t)
            continue
        entries = tuple((f, b) for f, b in t.entries
                        if (s := r.frame_score(f)) is not None and s >= threshold)
        if entries:
            out.append(Tracklet(t.track_id, entries))
    return out


def referring_eval(gt: Sequence[Tracklet], descs: Sequence[DescriptionRecord], pred: Sequence[Tracklet],
                   table: ScoreTable, threshold: float, granularity: str = "tracklet",
                   alpha: float = 0.5) -> EvalResult:
    """Unweighted mean of per-description metrics; descriptions without positives are skipped."""
    results = []
    for d in descs:
        g = positives_gt(gt, d)
        if not g:
            continue
        p = selected_predictions(pred, table, d.desc_id, threshold, granularity)
        results.append(evaluate(g, p, alpha=alpha))
    if not results:
        raise UndefinedMetricError("no description has positive ground truth")
    out = EvalResult()
    for k in EvalResult.METRICS:
        setattr(out, k, float(np.mean([getattr(r, k) for r in results])))
    out.counts = {"descriptions": len(results)}
    return out
