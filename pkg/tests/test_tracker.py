import itertools
import math

import numpy as np
import pytest

from reftrack import kalman as K
from reftrack.assignment import FORBIDDEN, assignment_cost, hungarian
from reftrack.core import BBox, Detection, Tracklet, iou
from reftrack.metrics import evaluate, mota_counts
from reftrack.tracker import (SequencingError, Track, TrackStatus, Tracker, TrackerConfig, association_cost,
                              exit_decision, interpolate, run_tracker, velocity_cost)


def _track(center=(100.0, 100.0), vel_dir=None, size=(20.0, 40.0)):
    w, h = size
    box = BBox(center[0] - w / 2, center[1] - h / 2, w, h)
    t = Track(1, K.kf_init(box.to_xyah()), box)
    t.velocity_dir = None if vel_dir is None else np.asarray(vel_dir, dtype=float)
    return t


def _box_at(cx, cy, w=20.0, h=40.0):
    return BBox(cx - w / 2, cy - h / 2, w, h)


def test_hungarian_examples():
    a = hungarian([[1, 2], [2, 1]])
    assert a == {0: 0, 1: 1} and assignment_cost([[1, 2], [2, 1]], a) == 2
    assert hungarian(np.full((3, 2), FORBIDDEN)) == {}
    assert hungarian(np.zeros((0, 3))) == {}


def test_hungarian_avoids_forbidden():
    cost = np.array([[FORBIDDEN, 1.0], [5.0, FORBIDDEN]])
    assert hungarian(cost) == {0: 1, 1: 0}
    cost = np.array([[0.0, FORBIDDEN], [1.0, FORBIDDEN]])
    assert hungarian(cost) == {0: 0}


def test_hungarian_rejects_nan():
    with pytest.raises(ValueError):
        hungarian([[np.nan]])


def test_velocity_cost_examples():
    t = _track(vel_dir=(1.0, 0.0))
    assert velocity_cost(t, _box_at(150, 100)) == pytest.approx(0.0, abs=1e-15)
    assert velocity_cost(t, _box_at(50, 100)) == pytest.approx(2.0, abs=1e-15)
    assert velocity_cost(t, _box_at(150, 150)) == pytest.approx(1 - math.sqrt(2) / 2, abs=1e-12)
    assert velocity_cost(_track(), _box_at(150, 100)) == 0.0


def test_association_cost_examples():
    cfg = TrackerConfig()
    t = _track(vel_dir=(1.0, 0.0))
    same = Detection(1, t.predicted_box())
    far = Detection(1, _box_at(900, 600))
    c = association_cost([t], [same, far], cfg)
    assert c[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert c[0, 1] == FORBIDDEN


def test_association_cost_formula():
    rng = np.random.default_rng(0)
    cfg = TrackerConfig(iou_gate=0.0)
    tracks = [_track((rng.uniform(80, 120), rng.uniform(80, 120)), rng.normal(size=2)) for _ in range(3)]
    for t in tracks:
        t.velocity_dir /= np.linalg.norm(t.velocity_dir)
    dets = [Detection(1, _box_at(rng.uniform(80, 120), rng.uniform(80, 120))) for _ in range(3)]
    c = association_cost(tracks, dets, cfg)
    for i, j in itertools.product(range(3), range(3)):
        v = iou(tracks[i].predicted_box(), dets[j].bbox)
        vel = cfg.lambda_vel * velocity_cost(tracks[i], dets[j])
        ref = FORBIDDEN if v < cfg.iou_gate or v == 0 else 1 - v + vel
        assert c[i, j] == pytest.approx(ref, rel=1e-12)


def test_exit_decision():
    cfg = TrackerConfig()
    assert exit_decision(_track((-1.0, 10.0)), cfg)
    assert not exit_decision(_track((0.0, 0.0)), cfg)
    assert not exit_decision(_track((640.0, 360.0)), cfg)
    assert exit_decision(_track((1280.0, 10.0)), cfg)


def test_status_transitions():
    t = _track()
    t.mark(TrackStatus.CONFIRMED)
    with pytest.raises(ValueError):
        t.mark(TrackStatus.TENTATIVE)
    t.mark(TrackStatus.DELETED)
    with pytest.raises(ValueError):
        t.mark(TrackStatus.CONFIRMED)


def _moving(n, start=(100.0, 200.0), vel=(3.0, 1.0), skip=()):
    return [Detection(f, _box_at(start[0] + vel[0] * f, start[1] + vel[1] * f), 0.9)
            for f in range(1, n + 1) if f not in skip]


def test_single_object_noiseless():
    out = run_tracker(_moving(30), TrackerConfig.plain_sort())
    assert len(out) == 1 and len(out[0]) == 30


def test_long_gap_starts_new_identity():
    cfg = TrackerConfig(max_age=5, interp_max_gap=0)
    dets = _moving(30, skip=range(11, 17))       # 6 frames missing = max_age + 1
    out = run_tracker(dets, cfg)
    assert len(out) == 2
    assert out[0].frames[-1] == 10 and out[1].frames[0] == 17


def test_short_gap_is_bridged_and_interpolated():
    cfg = TrackerConfig(max_age=10, interp_max_gap=20)
    out = run_tracker(_moving(30, skip=range(11, 15)), cfg)
    assert len(out) == 1 and out[0].frames == list(range(1, 31))


def test_step_sequencing():
    trk = Tracker()
    trk.step(1, [])
    with pytest.raises(SequencingError):
        trk.step(1, [])


def test_nkf_requires_net():
    with pytest.raises(ValueError):
        Tracker(TrackerConfig(use_nkf=True))


def test_crossing_objects_keep_identity_with_nkf():
    # two boxes cross at frame 20; gt ids 1 (rightward) and 2 (leftward)
    gt_a = [(f, _box_at(100 + 10 * f, 300)) for f in range(1, 41)]
    gt_b = [(f, _box_at(500 - 10 * f, 310)) for f in range(1, 41)]
    gt = [Tracklet(1, tuple(gt_a)), Tracklet(2, tuple(gt_b))]
    rng = np.random.default_rng(3)
    dets = []
    for f in range(1, 41):
        for box in (gt_a[f - 1][1], gt_b[f - 1][1]):
            dx, dy = rng.normal(0, 0.5, 2)
            dets.append(Detection(f, BBox(box.x_left + dx, box.y_top + dy, box.width, box.height), 0.9))
    net = K.NoiseNet.constant(K.NoiseParams.scaled(0.1, 1.0))
    out = run_tracker(dets, TrackerConfig(use_nkf=True, n_init=1), noise_net=net)
    assert mota_counts(gt, out)["idsw"] == 0


def test_track_ids_unique_and_positive():
    rng = np.random.default_rng(4)
    dets = [Detection(f, _box_at(rng.uniform(50, 1200), rng.uniform(50, 700)), rng.uniform(0.1, 1))
            for f in range(1, 40) for _ in range(5)]
    out = run_tracker(dets, TrackerConfig(byte_mode=True, n_init=1))
    ids = [t.track_id for t in out]
    assert len(ids) == len(set(ids)) and min(ids) >= 1


def test_interpolate_examples():
    t = Tracklet(1, ((1, BBox(0, 0, 2, 2)), (3, BBox(2, 0, 2, 2))))
    filled = interpolate(t, 5)
    assert filled.frames == [1, 2, 3] and filled.box_at(2).x_left == 1.0
    long_gap = Tracklet(1, ((1, BBox(0, 0, 2, 2)), (8, BBox(7, 0, 2, 2))))
    assert interpolate(long_gap, 6) == long_gap


def test_interpolate_segment_oracle():
    entries = ((1, BBox(0, 0, 4, 4)), (4, BBox(6, 3, 7, 4)), (5, BBox(6, 3, 7, 4)), (9, BBox(14, 3, 3, 8)))
    out = interpolate(Tracklet(2, entries), 10)
    assert out.frames == list(range(1, 10))
    for (f0, b0), (f1, b1) in zip(entries, entries[1:]):
        for f in range(f0, f1 + 1):
            u = (f - f0) / (f1 - f0)
            ref = [a + u * (b - a) for a, b in zip(b0.as_tuple(), b1.as_tuple())]
            np.testing.assert_allclose(out.box_at(f).as_tuple(), ref, rtol=1e-14, atol=1e-14)


def test_byte_stage_recovers_low_confidence():
    dets = [Detection(f, _box_at(100 + 3 * f, 200), 0.9 if f < 10 else 0.3) for f in range(1, 21)]
    plain = run_tracker(dets, TrackerConfig(byte_mode=False, interp_max_gap=0))
    byte = run_tracker(dets, TrackerConfig(byte_mode=True, interp_max_gap=0))
    assert sum(len(t) for t in byte) > sum(len(t) for t in plain)
    gt = [Tracklet(1, tuple((d.frame, d.bbox) for d in dets))]
    assert evaluate(gt, byte).mota >= evaluate(gt, plain).mota
