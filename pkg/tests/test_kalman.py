import math

import numpy as np
import pytest

from reftrack import kalman as K
from reftrack import synth
from reftrack.core import BBox, Tracklet
from reftrack.nn import tensor as T


def _random_psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.1 * np.eye(n)


def test_init_example_and_formula():
    s = K.kf_init([10, 20, 0.5, 8])
    np.testing.assert_array_equal(s.mean, [10, 20, 0.5, 8, 0, 0, 0, 0])
    wp, wv, h = 1 / 20, 1 / 160, 8.0
    std = [2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h, 10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h]
    np.testing.assert_allclose(s.covariance, np.diag(np.square(std)), rtol=1e-15)
    assert np.all(np.linalg.eigvalsh(s.covariance) > 0)


def test_predict_examples():
    s = K.FilterState(np.array([0, 0, 1, 2, 1, 0, 0, 0.0]), np.zeros((8, 8)))
    p = K.kf_predict(s, Q=np.zeros(8))
    np.testing.assert_array_equal(p.mean, [1, 0, 1, 2, 1, 0, 0, 0])
    np.testing.assert_array_equal(K.kf_predict(s, Q=np.eye(8)).covariance, np.eye(8))


def test_predict_loop_oracle():
    rng = np.random.default_rng(0)
    s = K.FilterState(rng.normal(size=8), _random_psd(rng, 8))
    Q = np.diag(rng.uniform(0.1, 1, 8))
    F = K.CV_MODEL.F
    ref = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            ref[i, j] = sum(F[i, a] * s.covariance[a, b] * F[j, b] for a in range(8) for b in range(8)) + Q[i, j]
    p = K.kf_predict(s, Q=Q)
    np.testing.assert_allclose(p.covariance, ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(p.mean, [sum(F[i, a] * s.mean[a] for a in range(8)) for i in range(8)], rtol=1e-14)


def test_gain_scalar_cases():
    g = K.kf_gain(np.eye(8), R=np.eye(4))
    np.testing.assert_allclose(np.diag(g[:4]), 0.5, rtol=1e-15)
    g = K.kf_gain(np.eye(8), R=np.full(4, 1e-12))
    np.testing.assert_allclose(np.diag(g[:4]), 1.0, rtol=1e-9)


def test_gain_residual():
    rng = np.random.default_rng(1)
    for _ in range(20):
        P, R = _random_psd(rng, 8), _random_psd(rng, 4)
        H = K.CV_MODEL.H
        g = K.kf_gain(P, R=R)
        np.testing.assert_allclose(g @ (H @ P @ H.T + R), P @ H.T, atol=1e-8)


def test_update_examples():
    rng = np.random.default_rng(2)
    s = K.FilterState(rng.normal(size=8), _random_psd(rng, 8))
    u = K.kf_update(s, s.mean[:4], R=np.eye(4))
    np.testing.assert_allclose(u.mean, s.mean, rtol=0, atol=1e-14)
    s = K.FilterState(np.zeros(8), np.eye(8))
    assert K.kf_update(s, [2, 2, 2, 2], R=np.eye(4)).mean[0] == pytest.approx(1.0, abs=1e-15)


def test_update_information_form():
    rng = np.random.default_rng(3)
    H = K.CV_MODEL.H
    for _ in range(20):
        P, R = _random_psd(rng, 8), _random_psd(rng, 4)
        x, z = rng.normal(size=8), rng.normal(size=4)
        u = K.kf_update(K.FilterState(x, P), z, R=R)
        info = np.linalg.inv(P) + H.T @ np.linalg.inv(R) @ H
        P_post = np.linalg.inv(info)
        x_post = P_post @ (np.linalg.solve(P, x) + H.T @ np.linalg.solve(R, z))
        np.testing.assert_allclose(u.covariance, P_post, atol=1e-8)
        np.testing.assert_allclose(u.mean, x_post, atol=1e-8)


def test_non_pd_innovation_raises():
    with pytest.raises(K.NumericError):
        K.kf_gain(np.zeros((8, 8)), R=-np.eye(4))


def test_covariance_stays_psd():
    rng = np.random.default_rng(4)
    s = K.kf_init([300, 200, 0.5, 80])
    for _ in range(2000):
        s = K.kf_predict(s, Q=rng.uniform(1e-4, 5, 8))
        s = K.kf_update(s, s.mean[:4] + rng.normal(0, 2, 4), R=rng.uniform(1e-4, 5, 4))
        assert np.array_equal(s.covariance, s.covariance.T)
        assert np.linalg.eigvalsh(s.covariance).min() > 0


def _zero_net(base_q=2.0, base_r=3.0):
    net = K.NoiseNet.init(0, 8, base_q=base_q, base_r=base_r)
    for mlp in (net.r_net, net.q_net):
        for layer in mlp.layers:
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0
    return net


def test_nkf_noise_zero_weights():
    net = _zero_net()
    n1 = K.nkf_noise(net, [10, 20, 0.5, 30], np.arange(8.0))
    n2 = K.nkf_noise(net, [500, 90, 0.6, 70], -np.arange(8.0))
    # softplus(0) = ln 2, plus the positive floor
    np.testing.assert_allclose(n1.r_diag, 3.0 * K.R_PROFILE * math.log(2) + K.NOISE_FLOOR, rtol=1e-15)
    np.testing.assert_allclose(n1.q_diag, 2.0 * K.Q_PROFILE * math.log(2) + K.NOISE_FLOOR, rtol=1e-15)
    np.testing.assert_array_equal(n1.r_diag, n2.r_diag)
    np.testing.assert_array_equal(n1.q_diag, n2.q_diag)


def test_nkf_noise_layer_oracle():
    net = K.NoiseNet.init(5, 6, norm_scale=100.0)
    z = np.array([120.0, 80.0, 0.5, 40.0])
    (l1, l2) = net.r_net.layers
    zn = z * np.array([0.01, 0.01, 1.0, 0.01])
    hidden = np.maximum(0.0, l1.weight.data @ zn + l1.bias.data)
    out = l2.weight.data @ hidden + l2.bias.data
    ref = np.log1p(np.exp(out)) * net.base_r + K.NOISE_FLOOR
    np.testing.assert_allclose(K.nkf_noise(net, z, np.zeros(8)).r_diag, ref, rtol=1e-12)


def _cv_series(n=60, seed=0, sigma=1.0):
    rng = np.random.default_rng(seed)
    k = np.arange(n)[:, None]
    gt = np.array([300.0, 200.0, 0.5, 80.0]) + k * np.array([2.0, -1.0, 0.0, 0.2])
    obs = gt + rng.normal(0, 1, size=gt.shape) * np.array([sigma, sigma, 0.0, sigma])
    return K.TrackSeries(gt, obs, np.ones(n, dtype=bool))


def test_constant_net_loss_matches_vanilla():
    noise = K.NoiseParams.scaled(0.5, 4.0)
    series = [_cv_series()]
    a = K.nkf_loss(K.NoiseNet.constant(noise), series)
    b = K.series_mse(series, K.FixedNoise(noise))
    assert a == pytest.approx(b, rel=1e-9)


def test_unrolled_gradient_fd():
    net = K.NoiseNet.init(1, 4, base_q=1.0, base_r=5.0, norm_scale=500.0)
    s = _cv_series(8, seed=1, sigma=2.0)
    s.observed[4] = False
    batch = K._make_batch([s])
    params = [p for _, p in net.parameters()]

    def loss():
        return K.unrolled_loss(net, batch)[0]

    grads = T.backward(loss(), params)
    for p, g in zip(params, grads):
        num = T.numeric_grad(lambda: loss().item(), p, step=1e-5)
        assert T.relative_error(g, num) <= 1e-4


def test_train_does_not_increase_loss():
    series = [_cv_series(40, seed=i, sigma=0.0) for i in range(3)]
    res = K.nkf_train(series, epochs=3, lr=1e-3, batch_size=2)
    assert len(res.epoch_losses) == 4
    assert res.epoch_losses[-1] <= res.epoch_losses[0]


def test_train_empty_dataset():
    s = K.TrackSeries(np.ones((1, 4)), np.ones((1, 4)), np.ones(1, dtype=bool))
    with pytest.raises(K.EmptyDatasetError):
        K.nkf_train([s], epochs=1)


def test_noise_net_round_trip(tmp_path):
    net = K.NoiseNet.init(3, 5, base_q=2.0, base_r=7.0, norm_scale=123.0)
    net.save(tmp_path / "n.json")
    again = K.NoiseNet.load(tmp_path / "n.json")
    z = np.array([10.0, 20.0, 0.5, 30.0])
    np.testing.assert_array_equal(net.observation(z), again.observation(z))
    np.testing.assert_array_equal(net.process(np.ones(8)), again.process(np.ones(8)))


def test_pair_series_noiseless():
    spec = synth.ScenarioSpec(n_objects=5, n_frames=30, det_sigma=0.0, miss_rate=0.0, fp_rate=0.0, seed=2)
    world = synth.generate_world(spec)
    series = K.pair_series(world.gt_tracklets(), world.detections)
    assert series and all(s.observed.all() for s in series)
    for s in series:
        np.testing.assert_allclose(s.obs, s.gt, rtol=0, atol=1e-12)


def test_pair_series_splits_gaps():
    boxes = [(f, BBox(10 * f, 0, 10, 20)) for f in (1, 2, 3, 6, 7)]
    t = Tracklet(1, tuple(boxes))
    from reftrack.core import Detection
    dets = [Detection(f, b) for f, b in boxes]
    series = K.pair_series([t], dets)
    assert [len(s) for s in series] == [3, 2]


def test_jitter_series():
    t = Tracklet(1, tuple((f, BBox(f, 0, 10, 20)) for f in range(1, 11)))
    zero = K.jitter_series([t], sigma=0.0)
    np.testing.assert_allclose(zero[0].obs, zero[0].gt, rtol=0, atol=1e-12)
    a, b = K.jitter_series([t], 2.0, seed=4), K.jitter_series([t], 2.0, seed=4)
    np.testing.assert_array_equal(a[0].obs, b[0].obs)
    assert not np.array_equal(a[0].obs, K.jitter_series([t], 2.0, seed=5)[0].obs)
