"""Dense layers, perceptrons and single/multi-head cross attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor, parameter

ACTIVATIONS = {
    "identity": lambda x: x,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "tanh": T.tanh,
}


class EmptyContextError(ValueError):
    """Attention was asked to attend over zero keys."""


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w`` over the trailing dimension of an arbitrary-rank ``x``.

    Flattens leading dims so the weight gradient is a single 2-D product.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"trailing dim {x.shape[-1]} != {w.shape[0]}")
    lead = x.shape[:-1]
    y = T.matmul(T.reshape(x, (-1, x.shape[-1])), w)
    return T.reshape(y, lead + (w.shape[1],))


@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor    # [out]
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"inconsistent layer shapes {self.weight.shape}, {self.bias.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str = "identity"):
        return cls(parameter(uniform_init(rng, (n_out, n_in), n_in)),
                   parameter(uniform_init(rng, (n_out,), n_in)), activation)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)

    def parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


def dense_forward(layer: DenseLayer, x) -> Tensor:
    """``act(x W^T + b)`` along the trailing dimension."""
    x = T.as_tensor(x)
    if x.shape[-1] != layer.n_in:
        raise DimensionError(f"layer expects trailing dim {layer.n_in}, got {x.shape}")
    y = linear(x, T.swapaxes(layer.weight, 0, 1)) + layer.bias
    return ACTIVATIONS[layer.activation](y)


@dataclass
class Mlp:
    layers: list[DenseLayer]

    @classmethod
    def init(cls, rng, sizes: list[int], hidden_act: str = "relu", out_act: str = "identity"):
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_act if i == len(sizes) - 2 else hidden_act
            layers.append(DenseLayer.init(rng, a, b, act))
        return cls(layers)

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.parameters(f"{prefix}{i}.")
        return out


@dataclass
class AttentionParams:
    """Projections for scaled dot-product cross attention.

    ``wq, wk, wv`` are ``[C, heads*head_dim]``; ``wo`` is ``[heads*head_dim, C]``.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    head_dim: int
    heads: int = 1

    def __post_init__(self):
        inner = self.heads * self.head_dim
        c = self.wq.shape[0]
        ok = (self.wq.shape == (c, inner) and self.wk.shape == (c, inner)
              and self.wv.shape == (c, inner) and self.wo.shape == (inner, c))
        if not ok:
            raise DimensionError("attention projection shapes are inconsistent")

    @classmethod
    def init(cls, rng, dim: int, head_dim: int | None = None, heads: int = 1):
        head_dim = head_dim or dim
        inner = heads * head_dim
        return cls(parameter(uniform_init(rng, (dim, inner), dim)),
                   parameter(uniform_init(rng, (dim, inner), dim)),
                   parameter(uniform_init(rng, (dim, inner), dim)),
                   parameter(uniform_init(rng, (inner, dim), inner)),
                   head_dim, heads)

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(prefix + n, getattr(self, n)) for n in ("wq", "wk", "wv", "wo")]


def _split_heads(x: Tensor, heads: int, head_dim: int) -> Tensor:
    # [..., N, h*d] -> [..., h, N, d]
    lead = x.shape[:-2]
    n = x.shape[-2]
    x = T.reshape(x, lead + (n, heads, head_dim))
    nd = len(lead)
    return T.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))


def _merge_heads(x: Tensor) -> Tensor:
    lead = x.shape[:-3]
    h, n, d = x.shape[-3:]
    nd = len(lead)
    x = T.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))
    return T.reshape(x, lead + (n, h * d))


def cross_attention(p: AttentionParams, q, kv, return_weights: bool = False):
    """Queries ``q [..., Nq, C]`` attend over ``kv [..., Nk, C]``.

    Raises:
        EmptyContextError: ``Nk == 0``.
    """
    q, kv = T.as_tensor(q), T.as_tensor(kv)
    if kv.shape[-2] == 0:
        raise EmptyContextError("cross attention needs at least one key")
    if q.shape[-1] != p.dim or kv.shape[-1] != p.dim:
        raise DimensionError(f"attention expects channel dim {p.dim}, got {q.shape}, {kv.shape}")
    if kv.shape[-2] == 1:
        # softmax over one key is exactly 1: every query reads that key's value
        lead = np.broadcast_shapes(q.shape[:-2], kv.shape[:-2])
        out = T.broadcast_to(linear(linear(kv, p.wv), p.wo), lead + q.shape[-2:])
        if return_weights:
            return out, np.ones(lead + (p.heads, q.shape[-2], 1))
        return out
    qh = _split_heads(linear(q, p.wq), p.heads, p.head_dim)
    kh = _split_heads(linear(kv, p.wk), p.heads, p.head_dim)
    vh = _split_heads(linear(kv, p.wv), p.heads, p.head_dim)
    logits = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(p.head_dim))
    attn = T.softmax(logits, axis=-1)
    out = linear(_merge_heads(T.matmul(attn, vh)), p.wo)
    return (out, attn) if return_weights else out


def softmax(x, temperature: float = 1.0) -> Tensor:
    """Stable softmax of ``temperature * x`` over the last axis."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return T.softmax(x, axis=-1, temperature=temperature)


def cosine(a, b, axis: int = -1, eps: float = 0.0) -> Tensor:
    a, b = T.as_tensor(a), T.as_tensor(b)
    na = T.sqrt(T.tsum(a * a, axis=axis) + eps)
    nb = T.sqrt(T.tsum(b * b, axis=axis) + eps)
    return T.tsum(a * b, axis=axis) / (na * nb)


@dataclass
class ParamSet:
    """Ordered named parameters; optimizers and weight files iterate over it."""

    named: list[tuple[str, Tensor]] = field(default_factory=list)

    def __iter__(self):
        return iter(t for _, t in self.named)

    def names(self) -> list[str]:
        return [n for n, _ in self.named]

    def zero_grad(self) -> None:
        for _, t in self.named:
            t.grad = None

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for _, t in self.named]

    def __len__(self) -> int:
        return len(self.named)
