"""Constant-velocity Kalman filter over ``(cx, cy, aspect, h)`` and its neural-noise variant.

The vanilla filter takes fixed diagonal process/observation noise. The
neural filter (NKF) predicts the observation noise ``R_k`` from the current
observation and the process noise ``Q_k`` from the previous state mean with
two small fully connected networks, then runs the same recursion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np
import scipy.linalg

from . import nn
from .nn import tensor as T
from .nn.io import assign_weights, dump_weights, load_weights

log = logging.getLogger(__name__)

NDIM = 4
SDIM = 8

# Per-dimension shapes of the noise diagonals; scalar bases multiply these.
R_PROFILE = np.array([1.0, 1.0, 1e-4, 1.0])
Q_PROFILE = np.array([1.0, 1.0, 1e-4, 1.0, 0.1, 0.1, 1e-5, 0.1])

NOISE_FLOOR = 1e-8
CHOL_JITTER = 1e-9


class NumericError(ArithmeticError):
    """The innovation covariance could not be factorized."""

    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        super().__init__(message if condition is None else f"{message} (cond ~ {condition:.3g})")


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MotionModel:
    F: np.ndarray
    H: np.ndarray

    @classmethod
    def constant_velocity(cls, dt: float = 1.0) -> "MotionModel":
        F = np.eye(SDIM)
        for i in range(NDIM):
            F[i, NDIM + i] = dt
        H = np.eye(NDIM, SDIM)
        F.setflags(write=False)
        H.setflags(write=False)
        return cls(F, H)


CV_MODEL = MotionModel.constant_velocity()


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box_xyah(self) -> np.ndarray:
        return self.mean[:NDIM]


@dataclass(frozen=True)
class NoiseParams:
    """Diagonals of the process (8) and observation (4) covariances."""

    q_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_diag, dtype=float).reshape(SDIM)
        r = np.asarray(self.r_diag, dtype=float).reshape(NDIM)
        if np.any(q <= 0) or np.any(r <= 0):
            raise ValueError("noise diagonals must be strictly positive")
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "r_diag", r)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @classmethod
    def scaled(cls, base_q: float, base_r: float) -> "NoiseParams":
        return cls(base_q * Q_PROFILE, base_r * R_PROFILE)


def _as_matrix(noise, n: int) -> np.ndarray:
    arr = np.asarray(noise, dtype=float)
    return np.diag(arr) if arr.ndim == 1 else arr.reshape(n, n)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def kf_init(z: Sequence[float], w_pos: float = 1.0 / 20, w_vel: float = 1.0 / 160) -> FilterState:
    """Track birth from one observation: zero velocity, h-scaled diagonal covariance."""
    z = np.asarray(z, dtype=float).reshape(NDIM)
    h = z[3]
    std = np.array([2 * w_pos * h, 2 * w_pos * h, 1e-2, 2 * w_pos * h,
                    10 * w_vel * h, 10 * w_vel * h, 1e-5, 10 * w_vel * h])
    return FilterState(np.concatenate([z, np.zeros(NDIM)]), np.diag(std ** 2))


def kf_predict(s: FilterState, m: MotionModel = CV_MODEL, Q=None) -> FilterState:
    """Mean ``F x``, covariance ``F P F^T + Q``."""
    Qm = np.zeros((SDIM, SDIM)) if Q is None else (
        Q.Q if isinstance(Q, NoiseParams) else _as_matrix(Q, SDIM))
    mean = m.F @ s.mean
    cov = _symmetrize(m.F @ s.covariance @ m.F.T + Qm)
    return FilterState(mean, cov)


def _cho(S: np.ndarray):
    try:
        return scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.cho_factor(S + CHOL_JITTER * np.eye(len(S)), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(S)) if np.all(np.isfinite(S)) else math.inf
        raise NumericError("innovation covariance is not positive definite", cond) from None


def kf_gain(cov_pred: np.ndarray, m: MotionModel = CV_MODEL, R=None) -> np.ndarray:
    """``K = P' H^T (H P' H^T + R)^{-1}``, inverted through a Cholesky factor."""
    H = m.H
    Rm = np.zeros((len(H), len(H))) if R is None else (
        R.R if isinstance(R, NoiseParams) else _as_matrix(R, len(H)))
    S = H @ cov_pred @ H.T + Rm
    PHt = cov_pred @ H.T
    # K S = P'H^T  <=>  S K^T = H P'
    return scipy.linalg.cho_solve(_cho(S), PHt.T, check_finite=False).T


def kf_update(s_pred: FilterState, z: Sequence[float], m: MotionModel = CV_MODEL, R=None) -> FilterState:
    z = np.asarray(z, dtype=float).reshape(len(m.H))
    K = kf_gain(s_pred.covariance, m, R)
    mean = s_pred.mean + K @ (z - m.H @ s_pred.mean)
    cov = _symmetrize(s_pred.covariance - K @ m.H @ s_pred.covariance)
    return FilterState(mean, cov)


# ---------------------------------------------------------------- noise sources

class NoiseSource(Protocol):
    def __call__(self, z: np.ndarray, x_prev: np.ndarray) -> NoiseParams: ...


@dataclass(frozen=True)
class FixedNoise:
    """Vanilla filter noise: the same ``(Q, R)`` at every step."""

    params: NoiseParams

    def __call__(self, z, x_prev) -> NoiseParams:
        return self.params

    def process(self, x_prev) -> np.ndarray:
        return self.params.q_diag

    def observation(self, z) -> np.ndarray:
        return self.params.r_diag


@dataclass
class NoiseNet:
    """R-Net (4 -> hidden -> 4) and Q-Net (8 -> hidden -> 8).

    Outputs pass through softplus and scale the base diagonals:
    ``R = softplus(r_net(z)) * base_r + floor``. Inputs are divided by
    ``norm_scale`` (the image diagonal) on the positional components.
    """

    r_net: nn.Mlp
    q_net: nn.Mlp
    base_r: np.ndarray = field(default_factory=lambda: R_PROFILE.copy())
    base_q: np.ndarray = field(default_factory=lambda: Q_PROFILE.copy())
    norm_scale: float = 1.0
    hidden: int = 32

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 32, base_q=None, base_r=None, norm_scale: float = 1.0):
        rng = np.random.default_rng(seed)
        r = nn.Mlp.init(rng, [NDIM, hidden, NDIM], "relu", "identity")
        q = nn.Mlp.init(rng, [SDIM, hidden, SDIM], "relu", "identity")
        return cls(r, q, _base(base_r, R_PROFILE), _base(base_q, Q_PROFILE), float(norm_scale), hidden)

    @classmethod
    def constant(cls, noise: NoiseParams, hidden: int = 4, norm_scale: float = 1.0) -> "NoiseNet":
        """A net whose output is exactly ``noise`` for every input (zero weights)."""
        net = cls.init(0, hidden, noise.q_diag - NOISE_FLOOR, noise.r_diag - NOISE_FLOOR, norm_scale)
        unit = math.log(math.expm1(1.0))  # softplus(unit) == 1
        for mlp in (net.r_net, net.q_net):
            for layer in mlp.layers:
                layer.weight.data[...] = 0.0
                layer.bias.data[...] = 0.0
            mlp.layers[-1].bias.data[...] = unit
        return net

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return self.r_net.parameters("r_net.") + self.q_net.parameters("q_net.")

    # positional components get the image-diagonal normalization, aspect stays raw
    def _norm_obs(self, z):
        s = np.array([1 / self.norm_scale, 1 / self.norm_scale, 1.0, 1 / self.norm_scale])
        return z * s

    def _norm_state(self, x):
        s = np.concatenate([[1 / self.norm_scale] * 2, [1.0], [1 / self.norm_scale]] * 2)
        return x * s

    def observation_tensor(self, z) -> T.Tensor:
        out = T.softplus(self.r_net(self._norm_obs(T.as_tensor(z))))
        return out * self.base_r + NOISE_FLOOR

    def process_tensor(self, x) -> T.Tensor:
        out = T.softplus(self.q_net(self._norm_state(T.as_tensor(x))))
        return out * self.base_q + NOISE_FLOOR

    def observation(self, z) -> np.ndarray:
        return self.observation_tensor(np.asarray(z, dtype=float)).data

    def process(self, x_prev) -> np.ndarray:
        return self.process_tensor(np.asarray(x_prev, dtype=float)).data

    def __call__(self, z, x_prev) -> NoiseParams:
        return NoiseParams(self.process(x_prev), self.observation(z))

    def header(self) -> dict:
        return {"kind": "noise_net", "hidden": self.hidden, "norm_scale": self.norm_scale,
                "base_q": [float(v) for v in self.base_q], "base_r": [float(v) for v in self.base_r]}

    def save(self, path) -> None:
        dump_weights(self.parameters(), path, self.header())

    @classmethod
    def load(cls, path) -> "NoiseNet":
        header, loaded = load_weights(path)
        if header.get("kind") != "noise_net":
            raise ValueError(f"{path} does not hold a noise net")
        net = cls.init(0, int(header["hidden"]), header["base_q"], header["base_r"],
                       float(header.get("norm_scale", 1.0)))
        assign_weights(net.parameters(), loaded)
        return net


def _base(value, profile: np.ndarray) -> np.ndarray:
    if value is None:
        return profile.copy()
    arr = np.asarray(value, dtype=float)
    return arr * profile if arr.ndim == 0 else arr.reshape(profile.shape).copy()


def nkf_noise(net: NoiseNet, z_k, x_prev) -> NoiseParams:
    """``R_k`` from the current observation, ``Q_k`` from the previous state mean."""
    return net(np.asarray(z_k, dtype=float), np.asarray(x_prev, dtype=float))


# ---------------------------------------------------------------- sequence filtering

def filter_sequence(observations: Sequence[np.ndarray | None], noise, m: MotionModel = CV_MODEL,
                    init_kw: dict | None = None) -> np.ndarray:
    """Run the filter over one tracklet; returns posterior means ``[n, 8]``.

    ``observations[0]`` must be present; ``None`` entries are predict-only.
    ``noise`` is a :class:`FixedNoise` or :class:`NoiseNet`.
    """
    if observations[0] is None:
        raise ValueError("first observation is required for track birth")
    s = kf_init(observations[0], **(init_kw or {}))
    means = [s.mean]
    for z in observations[1:]:
        s = kf_predict(s, m, np.diag(noise.process(s.mean)))
        if z is not None:
            s = kf_update(s, z, m, np.diag(noise.observation(z)))
        means.append(s.mean)
    return np.array(means)


@dataclass
class TrackSeries:
    """Ground-truth center-form boxes with paired (possibly missing) observations."""

    gt: np.ndarray                  # [n, 4]
    obs: np.ndarray                 # [n, 4]; rows are ignored where ``observed`` is False
    observed: np.ndarray            # [n] bool

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=float)
        self.obs = np.asarray(self.obs, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)

    def __len__(self):
        return len(self.gt)

    def observations(self) -> list[np.ndarray | None]:
        return [o if ok else None for o, ok in zip(self.obs, self.observed)]


def pair_series(gt, detections, min_iou: float = 0.5) -> list[TrackSeries]:
    """``TrackSeries`` from gt tracklets and an unlabeled detection list.

    Each frame's detections are matched one-to-one to the gt boxes by
    maximum IoU (pairs below ``min_iou`` are never matched). A tracklet with
    gaps in its frames is split into contiguous runs; runs that are shorter
    than two frames or start unobserved are dropped.
    """
    from .assignment import FORBIDDEN, hungarian
    from .core import frames_index, iou_matrix

    by_frame = frames_index(detections)
    gt_at: dict[int, list[tuple[int, object]]] = {}
    for t in gt:
        for f, b in t.entries:
            gt_at.setdefault(f, []).append((t.track_id, b))
    obs: dict[tuple[int, int], np.ndarray] = {}
    for f, items in gt_at.items():
        dets = by_frame.get(f, [])
        if not dets:
            continue
        ious = iou_matrix([b for _, b in items], [d.bbox for d in dets])
        cost = np.where(ious >= min_iou, 1.0 - ious, FORBIDDEN)
        for i, j in hungarian(cost).items():
            obs[(f, items[i][0])] = dets[j].bbox.to_xyah()
    out = []
    for t in gt:
        run: list[tuple[int, object]] = []
        for f, b in list(t.entries) + [(None, None)]:
            if run and (f is None or f != run[-1][0] + 1):
                frames = [g for g, _ in run]
                g = np.array([bb.to_xyah() for _, bb in run])
                seen = np.array([(fr, t.track_id) in obs for fr in frames])
                z = np.array([obs.get((fr, t.track_id), g[i]) for i, fr in enumerate(frames)])
                if len(g) >= 2 and seen[0]:
                    out.append(TrackSeries(g, z, seen))
                run = []
            if f is not None:
                run.append((f, b))
    return out


def jitter_series(gt, sigma: float = 1.0, seed: int = 0) -> list[TrackSeries]:
    """``TrackSeries`` observing every gt box through Gaussian pixel noise on (x, y, w, h).

    Noise is drawn per (track, frame) in track order; widths and heights are
    kept at least one pixel. Gaps in a tracklet split it into runs.
    """
    from .core import BBox

    rng = np.random.default_rng([seed, 17])
    out = []
    for t in gt:
        runs: list[list] = []
        for f, b in t.entries:
            if not runs or f != runs[-1][-1][0] + 1:
                runs.append([])
            runs[-1].append((f, b))
        for run in runs:
            if len(run) < 2:
                continue
            g = np.array([b.to_xyah() for _, b in run])
            noise = rng.normal(0.0, sigma, size=(len(run), 4))
            z = np.array([BBox(b.x_left + e[0], b.y_top + e[1], max(1.0, b.width + e[2]),
                               max(1.0, b.height + e[3])).to_xyah()
                          for (_, b), e in zip(run, noise)])
            out.append(TrackSeries(g, z, np.ones(len(run), dtype=bool)))
    return out


def series_mse(series: Iterable[TrackSeries], noise, m: MotionModel = CV_MODEL) -> float:
    """Mean squared error of ``H x_post`` against gt over frames 2..n of every series."""
    total, count = 0.0, 0
    for s in series:
        means = filter_sequence(s.observations(), noise, m)
        err = means[1:, :NDIM] - s.gt[1:]
        total += float(np.sum(err ** 2))
        count += len(err)
    if count == 0:
        raise EmptyDatasetError("no frames to evaluate")
    return total / count


def _chunks(series: Sequence[TrackSeries], cap: int) -> list[TrackSeries]:
    out = []
    for s in series:
        for start in range(0, len(s), cap):
            piece = TrackSeries(s.gt[start:start + cap], s.obs[start:start + cap],
                                s.observed[start:start + cap])
            if len(piece) >= 2 and piece.observed[0]:
                out.append(piece)
    return out


@dataclass
class _Batch:
    gt: np.ndarray      # [B, L, 4]
    obs: np.ndarray     # [B, L, 4]
    observed: np.ndarray  # [B, L]
    valid: np.ndarray   # [B, L]


def _make_batch(series: Sequence[TrackSeries]) -> _Batch:
    L = max(len(s) for s in series)
    B = len(series)
    gt = np.zeros((B, L, NDIM))
    obs = np.zeros((B, L, NDIM))
    observed = np.zeros((B, L), dtype=bool)
    valid = np.zeros((B, L), dtype=bool)
    for i, s in enumerate(series):
        n = len(s)
        gt[i, :n] = s.gt
        obs[i, :n] = s.obs
        observed[i, :n] = s.observed
        valid[i, :n] = True
        # padded rows repeat the last obs so the nets see finite inputs
        obs[i, n:] = s.obs[n - 1]
    obs[~observed & valid] = gt[~observed & valid]  # never read by the update, kept finite
    return _Batch(gt, obs, observed, valid)


def unrolled_loss(net: NoiseNet, batch: _Batch, m: MotionModel = CV_MODEL,
                  init_kw: dict | None = None) -> tuple[T.Tensor, int]:
    """Sum of squared errors of ``H x_post`` over valid frames 2..L, and the frame count.

    The whole predict/update recursion is recorded on the tape so the
    gradient flows through every gain.
    """
    B, L, _ = batch.gt.shape
    init = [kf_init(batch.obs[b, 0], **(init_kw or {})) for b in range(B)]
    x = T.Tensor(np.stack([s.mean for s in init]))              # [B, 8]
    P = T.Tensor(np.stack([s.covariance for s in init]))        # [B, 8, 8]
    F, H = m.F, m.H
    Ht = np.ascontiguousarray(H.T)
    eye = np.eye(SDIM)
    eye4 = np.eye(NDIM)
    total = None
    count = 0
    for k in range(1, L):
        q = net.process_tensor(x)                               # [B, 8]
        xp = T.matmul(x, F.T)
        Pp = T.matmul(T.matmul(F, P), F.T) + T.reshape(q, (B, SDIM, 1)) * eye
        z = batch.obs[:, k]
        r = net.observation_tensor(z)                           # [B, 4]
        HP = T.matmul(H, Pp)                                    # [B, 4, 8]
        S = T.matmul(HP, Ht) + T.reshape(r, (B, NDIM, 1)) * eye4
        Kt = T.solve(S, HP)                                     # [B, 4, 8]
        K = T.swapaxes(Kt, -1, -2)                              # [B, 8, 4]
        innov = z - T.matmul(xp, Ht)                            # [B, 4]
        xu = xp + T.reshape(T.matmul(K, T.reshape(innov, (B, NDIM, 1))), (B, SDIM))
        Pu = Pp - T.matmul(K, HP)
        Pu = (Pu + T.swapaxes(Pu, -1, -2)) * 0.5
        upd = batch.observed[:, k]
        x_post = T.where(upd[:, None], xu, xp)
        P_post = T.where(upd[:, None, None], Pu, Pp)
        live = batch.valid[:, k]
        x = T.where(live[:, None], x_post, x)
        P = T.where(live[:, None, None], P_post, P)
        err = T.matmul(x_post, Ht) - batch.gt[:, k]
        sq = T.tsum(err * err, axis=1) * live.astype(float)
        term = T.tsum(sq)
        total = term if total is None else total + term
        count += int(live.sum())
    if total is None:
        total = T.Tensor(0.0)
    return total, count


def nkf_loss(net: NoiseNet, series: Sequence[TrackSeries], cap: int = 64) -> float:
    pieces = _chunks(series, cap)
    if not pieces:
        raise EmptyDatasetError("no usable tracklets")
    total, count = unrolled_loss(net, _make_batch(pieces))
    return total.item() / count


@dataclass
class NkfTrainResult:
    net: NoiseNet
    epoch_losses: list[float]


def nkf_train(series: Sequence[TrackSeries], net: NoiseNet | None = None, epochs: int = 10,
              lr: float = 1e-5, batch_size: int = 16, seed: int = 0, cap: int = 64,
              optimizer: str = "sgd", momentum: float = 0.9, **net_kw) -> NkfTrainResult:
    """Fit R-Net/Q-Net by backpropagating the box MSE through the unrolled filter.

    ``epoch_losses[0]`` is the loss of the initial net, ``epoch_losses[e]``
    the loss after epoch ``e``.

    Raises:
        EmptyDatasetError: every tracklet was shorter than two frames.
    """
    usable = []
    for s in series:
        if int(np.sum(s.observed)) < 2:
            log.warning("skipping tracklet with fewer than 2 observations")
            continue
        usable.append(s)
    pieces = _chunks(usable, cap)
    if not pieces:
        raise EmptyDatasetError("no tracklet has at least two observations")
    if net is None:
        net = NoiseNet.init(seed, **net_kw)
    params = [t for _, t in net.parameters()]
    rng = np.random.default_rng(seed)
    # group chunks of similar length so padding stays small
    pieces.sort(key=len)
    batches = [pieces[i:i + batch_size] for i in range(0, len(pieces), batch_size)]
    steps = max(1, epochs * len(batches))
    opt = nn.Optimizer(params, lr, steps, kind=optimizer, momentum=momentum)
    full = _make_batch(pieces)

    def evaluate() -> float:
        tot, cnt = unrolled_loss(net, full)
        return tot.item() / cnt

    losses = [evaluate()]
    for epoch in range(epochs):
        for bi in rng.permutation(len(batches)):
            batch = _make_batch(batches[bi])
            total, count = unrolled_loss(net, batch)
            for p in params:
                p.grad = None
            loss = total * (1.0 / max(count, 1))
            grads = T.backward(loss, params)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericError("non-finite gradient in noise-net training")
            opt.step(grads)
        losses.append(evaluate())
        log.info("nkf epoch %d loss %.6g", epoch + 1, losses[-1])
    return NkfTrainResult(net, losses)
