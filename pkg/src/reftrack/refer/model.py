"""Two-stream referring scorer with knowledge unification modules (KUM).

Shapes: ``f_global [..., T, S_g, C_v]``, ``f_local [..., T, S_l, C_v]``,
pooled text ``f_t [..., C]`` where ``...`` is an optional batch prefix.
Every KUM variant returns ``[..., T, C_v]``.

Variants:

* ``baseline``: local queries attend over global keys, residual add,
  spatial mean. Text is not used.
* ``cascade``: the baseline map ``f1`` (before pooling) is modulated by
  ``m``, an attention of ``f1`` over the projected text as a single key:
  ``f1 * (1 + m)``.
* ``xcorr``: ``K`` text-generated kernels correlate with ``f1``; the mean
  response, softmaxed over positions, replaces uniform spatial pooling.
* ``textfirst``: text gates both visual maps before the baseline
  aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..nn import tensor as T
from ..nn.io import assign_weights, dump_weights, load_weights
from ..nn.layers import DenseLayer, Mlp, linear, uniform_init

VARIANTS = ("baseline", "cascade", "xcorr", "textfirst")
ALIASES = {"cascade_attention": "cascade", "cross_correlation": "xcorr", "text_first": "textfirst"}


class DegenerateInputError(ValueError):
    """A zero vector reached the cosine logit head."""


def canonical_variant(name: str) -> str:
    v = ALIASES.get(name, name)
    if v not in VARIANTS:
        raise ValueError(f"unknown KUM variant {name!r}; expected one of {VARIANTS}")
    return v


@dataclass
class KumConfig:
    c_v: int = 64
    c_t: int = 32
    c: int = 32
    kernels: int = 4
    heads: int = 1
    head_dim: int | None = None
    gamma0: float = 10.0

    def to_dict(self) -> dict:
        return dict(c_v=self.c_v, c_t=self.c_t, c=self.c, kernels=self.kernels, heads=self.heads,
                    head_dim=self.head_dim, gamma0=self.gamma0)


@dataclass
class KumParams:
    variant: str
    cfg: KumConfig
    attn: nn.AttentionParams
    text_proj: DenseLayer
    attn2: nn.AttentionParams
    kernel_gen: DenseLayer
    gate_g: T.Tensor   # [C_v, C]
    gate_l: T.Tensor   # [C_v, C]
    visual_head: Mlp
    text_head: Mlp
    log_gamma: T.Tensor

    @classmethod
    def init(cls, variant: str = "cascade", cfg: KumConfig | None = None, seed: int = 0) -> "KumParams":
        """Seeded init; shared components are identical across variants for one seed."""
        cfg = cfg or KumConfig()
        rng = np.random.default_rng(seed)
        hd = cfg.head_dim or cfg.c_v // cfg.heads
        attn = nn.AttentionParams.init(rng, cfg.c_v, hd, cfg.heads)
        visual_head = Mlp.init(rng, [cfg.c_v, cfg.c, cfg.c])
        text_head = Mlp.init(rng, [cfg.c_t, cfg.c, cfg.c])
        text_proj = DenseLayer.init(rng, cfg.c, cfg.c_v)
        attn2 = nn.AttentionParams.init(rng, cfg.c_v, hd, cfg.heads)
        kernel_gen = DenseLayer.init(rng, cfg.c, cfg.kernels * cfg.c_v)
        gate_g = T.parameter(uniform_init(rng, (cfg.c_v, cfg.c), cfg.c))
        gate_l = T.parameter(uniform_init(rng, (cfg.c_v, cfg.c), cfg.c))
        return cls(canonical_variant(variant), cfg, attn, text_proj, attn2, kernel_gen, gate_g, gate_l,
                   visual_head, text_head, T.parameter(np.array(math.log(cfg.gamma0))))

    @property
    def gamma(self) -> float:
        return float(np.exp(self.log_gamma.data))

    def parameters(self, include_text: bool = True) -> list[tuple[str, T.Tensor]]:
        """Named parameters used by this variant (text head last)."""
        out = self.attn.parameters("attn.") + self.visual_head.parameters("visual_head.")
        if self.variant == "cascade":
            out += self.text_proj.parameters("text_proj.") + self.attn2.parameters("attn2.")
        elif self.variant == "xcorr":
            out += self.kernel_gen.parameters("kernel_gen.")
        elif self.variant == "textfirst":
            out += [("gate_g", self.gate_g), ("gate_l", self.gate_l)]
        out.append(("log_gamma", self.log_gamma))
        if include_text:
            out += self.text_head.parameters("text_head.")
        return out

    def trainable(self, freeze_text_head: bool = False) -> list[tuple[str, T.Tensor]]:
        """Parameters updated by training; the text encoder is frozen outside the model."""
        return self.parameters(include_text=not freeze_text_head)

    def header(self) -> dict:
        return {"model": "kum", "variant": self.variant, **self.cfg.to_dict()}

    def save(self, path) -> None:
        dump_weights(self.parameters(), path, self.header())

    @classmethod
    def load(cls, path) -> "KumParams":
        header, layers = load_weights(path)
        if header.get("model") != "kum":
            raise ValueError(f"{path} does not hold KUM weights")
        cfg = KumConfig(**{k: header[k] for k in KumConfig().to_dict()})
        p = cls.init(header["variant"], cfg)
        assign_weights(p.parameters(), layers)
        return p


# ------------------------------------------------------------------ streams
def textual_head(token_features, p: KumParams) -> T.Tensor:
    """Token mean, then the 2-layer perceptron ``C_t -> C``."""
    return p.text_head(T.mean(T.as_tensor(token_features), axis=-2))


def _aggregate(f_global, f_local, p: KumParams) -> T.Tensor:
    fl = T.as_tensor(f_local)
    return nn.cross_attention(p.attn, fl, f_global) + fl


def _check(f_global, f_local) -> None:
    g, l = T.as_tensor(f_global), T.as_tensor(f_local)
    if g.ndim < 3 or l.ndim < 3 or g.shape[:-2] != l.shape[:-2] or g.shape[-1] != l.shape[-1]:
        raise nn.DimensionError(f"global {g.shape} and local {l.shape} maps disagree")


def _text_like(f_t, visual: T.Tensor, extra: int) -> T.Tensor:
    """Reshape ``[..., X]`` text vectors to broadcast over ``visual``'s T (and ``extra`` more) axes."""
    t = T.as_tensor(f_t)
    return T.reshape(t, t.shape[:-1] + (1,) * (1 + extra) + (t.shape[-1],))


def _cascade_tail(f1: T.Tensor, f_t, p: KumParams) -> T.Tensor:
    tv = _text_like(p.text_proj(f_t), f1, 1)            # [..., 1, 1, C_v]
    kv = T.broadcast_to(tv, f1.shape[:-2] + (1, f1.shape[-1]))
    m = nn.cross_attention(p.attn2, f1, kv)
    return T.mean(f1 * (m + 1.0), axis=-2)


def _xcorr_tail(f1: T.Tensor, f_t, p: KumParams) -> T.Tensor:
    cv = f1.shape[-1]
    w = p.kernel_gen(f_t)                               # [..., K*C_v]
    w = T.reshape(w, w.shape[:-1] + (p.cfg.kernels, cv))
    w = T.reshape(w, w.shape[:-2] + (1,) + w.shape[-2:])  # [..., 1, K, C_v]
    resp = T.matmul(f1, T.swapaxes(w, -1, -2)) * (1.0 / math.sqrt(cv))  # [..., T, S, K]
    alpha = T.softmax(T.mean(resp, axis=-1), axis=-1)   # [..., T, S]
    return T.tsum(f1 * T.reshape(alpha, alpha.shape + (1,)), axis=-2)


def _gates(f_t, p: KumParams):
    gg = T.sigmoid(linear(f_t, T.swapaxes(p.gate_g, 0, 1)))
    gl = T.sigmoid(linear(f_t, T.swapaxes(p.gate_l, 0, 1)))
    return gg, gl


def kum_baseline(f_global, f_local, p: KumParams) -> T.Tensor:
    _check(f_global, f_local)
    return T.mean(_aggregate(f_global, f_local, p), axis=-2)


def kum_cascade(f_global, f_local, f_t, p: KumParams) -> T.Tensor:
    _check(f_global, f_local)
    return _cascade_tail(_aggregate(f_global, f_local, p), f_t, p)


def kum_xcorr(f_global, f_local, f_t, p: KumParams) -> T.Tensor:
    _check(f_global, f_local)
    return _xcorr_tail(_aggregate(f_global, f_local, p), f_t, p)


def kum_textfirst(f_global, f_local, f_t, p: KumParams) -> T.Tensor:
    _check(f_global, f_local)
    fg, fl = T.as_tensor(f_global), T.as_tensor(f_local)
    gg, gl = _gates(f_t, p)
    fg = fg * _text_like(gg, fg, 1)
    fl = fl * _text_like(gl, fl, 1)
    return T.mean(_aggregate(fg, fl, p), axis=-2)


def kum(f_global, f_local, f_t, p: KumParams) -> T.Tensor:
    if p.variant == "baseline":
        return kum_baseline(f_global, f_local, p)
    fn = {"cascade": kum_cascade, "xcorr": kum_xcorr, "textfirst": kum_textfirst}[p.variant]
    return fn(f_global, f_local, f_t, p)


def visual_feature(f_uni, p: KumParams) -> T.Tensor:
    """Temporal mean, then the visual head ``C_v -> C``."""
    return p.visual_head(T.mean(T.as_tensor(f_uni), axis=-2))


def logit_head(f_v, f_t, gamma) -> T.Tensor:
    """``sigmoid(gamma * cos(f_v, f_t))``; ``gamma`` may be a tensor."""
    f_v, f_t = T.as_tensor(f_v), T.as_tensor(f_t)
    for name, v in (("visual", f_v), ("text", f_t)):
        if np.any(np.linalg.norm(v.data, axis=-1) == 0):
            raise DegenerateInputError(f"zero {name} vector in the logit head")
    return T.sigmoid(nn.cosine(f_v, f_t) * gamma)


def focal_loss(s, label, alpha: float = 0.25, gamma_f: float = 2.0) -> T.Tensor:
    """Elementwise focal loss; scores are clamped to ``[1e-7, 1 - 1e-7]``."""
    s = T.clip(T.as_tensor(s), 1e-7, 1.0 - 1e-7)
    y = np.asarray(label, dtype=float)
    pt = T.where(y > 0.5, s, 1.0 - s)
    at = np.where(y > 0.5, alpha, 1.0 - alpha)
    return T.power(1.0 - pt, gamma_f) * T.log(pt) * (-at)


def forward(f_global, f_local, token_features, p: KumParams) -> T.Tensor:
    """Score of one window (or a batch of aligned windows and texts)."""
    ft = textual_head(token_features, p)
    fv = visual_feature(kum(f_global, f_local, ft, p), p)
    return logit_head(fv, ft, T.exp(p.log_gamma))


# ------------------------------------------------------------------ pair batches
@dataclass
class PairBatch:
    """Windows, texts and the (window, text) pairs to score.

    ``glob [W, T, S_g, C_v]``, ``loc [W, T, S_l, C_v]``, ``text [D, C_t]``
    (token means), ``vis_idx``/``txt_idx`` of length B.
    """

    glob: np.ndarray
    loc: np.ndarray
    text: np.ndarray
    vis_idx: np.ndarray
    txt_idx: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.vis_idx)

    def subset(self, rows: np.ndarray) -> "PairBatch":
        """Pairs ``rows`` with only the windows and texts they reference."""
        vis, vinv = np.unique(self.vis_idx[rows], return_inverse=True)
        txt, tinv = np.unique(self.txt_idx[rows], return_inverse=True)
        lab = None if self.labels is None else self.labels[rows]
        return PairBatch(self.glob[vis], self.loc[vis], self.text[txt], vinv, tinv, lab)


def pair_scores(p: KumParams, b: PairBatch) -> T.Tensor:
    """Scores ``[B]``; text-independent stages run once per window."""
    ft_all = p.text_head(T.as_tensor(b.text))                  # [D, C]
    ft = T.getitem(ft_all, b.txt_idx)                          # [B, C]
    if p.variant == "textfirst":
        fg = T.getitem(T.as_tensor(b.glob), b.vis_idx)
        fl = T.getitem(T.as_tensor(b.loc), b.vis_idx)
        fv = visual_feature(kum_textfirst(fg, fl, ft, p), p)
    elif p.variant == "baseline":
        fv_w = visual_feature(kum_baseline(b.glob, b.loc, p), p)  # [W, C]
        fv = T.getitem(fv_w, b.vis_idx)
    else:
        f1 = T.getitem(_aggregate(b.glob, b.loc, p), b.vis_idx)
        tail = _cascade_tail if p.variant == "cascade" else _xcorr_tail
        fv = visual_feature(tail(f1, ft, p), p)
    return logit_head(fv, ft, T.exp(p.log_gamma))


def predict(p: KumParams, b: PairBatch, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(b))
    for s in range(0, len(b), chunk):
        rows = np.arange(s, min(len(b), s + chunk))
        out[rows] = pair_scores(p, b.subset(rows)).data
    return out


# ------------------------------------------------------------------ training
class DegenerateDatasetError(ValueError):
    """Training pairs carry a single label."""


@dataclass
class ReferTrainResult:
    params: KumParams
    initial_loss: float
    final_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def dataset_loss(p: KumParams, data: PairBatch, alpha: float = 0.25, gamma_f: float = 2.0,
                 chunk: int = 2048) -> float:
    s = predict(p, data, chunk)
    return float(focal_loss(s, data.labels, alpha, gamma_f).data.mean())


def train_refer(data: PairBatch, params: KumParams | None = None, epochs: int = 100, lr0: float = 1e-5,
                batch_size: int = 32, seed: int = 0, optimizer: str = "sgd", momentum: float = 0.9,
                alpha: float = 0.25, gamma_f: float = 2.0, variant: str = "cascade",
                cfg: KumConfig | None = None, freeze_text_head: bool = True) -> ReferTrainResult:
    """Minimize the mean focal loss over ``data``.

    The text head stays frozen unless ``freeze_text_head`` is False.

    ``batch_size`` counts windows; each batch holds all pairs of its windows.
    """
    if data.labels is None:
        raise ValueError("training pairs need labels")
    labels = np.asarray(data.labels)
    if len(labels) == 0 or labels.min() == labels.max():
        raise DegenerateDatasetError("training data must contain both labels")
    if params is None:
        cfg = cfg or KumConfig(c_v=data.glob.shape[-1], c_t=data.text.shape[-1])
        params = KumParams.init(variant, cfg, seed)
    named = params.trainable(freeze_text_head)
    tensors = [t for _, t in named]
    initial = dataset_loss(params, data, alpha, gamma_f)
    if epochs <= 0:
        return ReferTrainResult(params, initial, initial, [])
    rng = np.random.default_rng([seed, 1])
    # batches group whole windows so shared stages run once per window
    n_win = len(data.glob)
    by_win = np.argsort(data.vis_idx, kind="stable")
    bounds = np.searchsorted(data.vis_idx[by_win], np.arange(n_win + 1))
    n_batches = math.ceil(n_win / batch_size)
    opt = nn.Optimizer(tensors, lr0, epochs * n_batches, kind=optimizer, momentum=momentum)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n_win)
        tot = 0.0
        for k in range(n_batches):
            wins = order[k * batch_size:(k + 1) * batch_size]
            rows = np.concatenate([by_win[bounds[w]:bounds[w + 1]] for w in wins])
            if not len(rows):
                continue
            sub = data.subset(rows)
            loss = T.mean(focal_loss(pair_scores(params, sub), sub.labels, alpha, gamma_f))
            grads = T.backward(loss, tensors)
            opt.step(grads)
            tot += float(loss.data) * len(rows)
        history.append(tot / len(data))
    final = dataset_loss(params, data, alpha, gamma_f)
    return ReferTrainResult(params, initial, final, history)
