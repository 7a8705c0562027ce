"""Layers built on :mod:`stgrounding.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as tt
from .tensor import Tensor


class ConfigError(ValueError):
    pass


class Module:
    """Parameter container discovered through instance attributes.

    Parameters are ``Tensor`` attributes with ``requires_grad``; children are
    ``Module`` attributes or lists of modules. Registration order is
    attribute assignment order, so names are stable across runs.
    """

    training: bool = True
    rng: np.random.Generator | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key in ("rng",):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for child in value:
                    yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator) -> None:
        for m in self.modules():
            m.rng = rng

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(xavier_uniform(rng, d_out, d_in), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return tt.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.shift = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tt.layer_norm(x, self.gain, self.shift, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 1.0):
        self.weight = Tensor(rng.normal(0.0, scale, size=(n, d)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.weight.shape[0]):
            raise IndexError(f"embedding id out of range [0, {self.weight.shape[0]})")
        flat = tt.take(self.weight, ids.reshape(-1), axis=0)
        return flat.reshape(ids.shape + (self.weight.shape[1],))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, mask, heads: int):
    """Scaled dot-product attention split over ``heads``.

    ``q`` is ``[..., Lq, d]``, ``k`` and ``v`` are ``[..., Lk, d]``; ``mask``
    (True = allowed) broadcasts to ``[..., Lq, Lk]``. Returns the output
    ``[..., Lq, d]`` and post-softmax weights ``[..., heads, Lq, Lk]``.
    """
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise tt.ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    dh = d // heads
    lead_q, lead_k = q.shape[:-2], k.shape[:-2]
    lq, lk = q.shape[-2], k.shape[-2]
    nq = len(lead_q)

    def split(x, lead, n):
        x = x.reshape(lead + (n, heads, dh))
        m = len(lead)
        return x.transpose(tuple(range(m)) + (m + 1, m, m + 2))

    qh = split(q, lead_q, lq)
    kh = split(k, lead_k, lk)
    vh = split(v, lead_k, lk)
    scores = tt.matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    if mask is not None:
        mask = np.expand_dims(np.asarray(mask, dtype=bool), -3)
    weights = tt.softmax_masked(scores, mask)
    out = tt.matmul(weights, vh)
    axes = tuple(range(nq)) + (nq + 1, nq, nq + 2)
    out = out.transpose(axes).reshape(lead_q + (lq, d))
    return out, weights


class MultiheadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if d % heads:
            raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.dropout = dropout
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask=None,
                 query_pos: Tensor | None = None, key_pos: Tensor | None = None):
        qin = query if query_pos is None else query + query_pos
        kin = key if key_pos is None else key + key_pos
        out, weights = multi_head_attention(
            self.q_proj(qin), self.k_proj(kin), self.v_proj(value), mask, self.heads
        )
        out = tt.dropout(out, self.dropout, self.rng, self.training)
        return self.out_proj(out), weights


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor) -> Tensor:
        h = tt.relu(self.fc1(x))
        h = tt.dropout(h, self.dropout, self.rng, self.training)
        return self.fc2(h)


class MLP(Module):
    """ReLU MLP with ``len(dims) - 1`` linear layers."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = tt.relu(x)
        return x


class EncoderLayer(Module):
    """Post-norm transformer encoder layer: self-attention then FFN."""

    def __init__(self, d: int, heads: int, ffn_dim: int, rng: np.random.Generator,
                 dropout: float = 0.1):
        self.self_attn = MultiheadAttention(d, heads, rng, dropout)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim, rng, dropout)
        self.norm2 = LayerNorm(d)
        self.dropout = dropout

    def __call__(self, x: Tensor, key_mask=None, pos: Tensor | None = None) -> Tensor:
        attn_mask = None
        if key_mask is not None:
            attn_mask = np.asarray(key_mask, dtype=bool)[..., None, :]
        a, _ = self.self_attn(x, x, x, attn_mask, query_pos=pos, key_pos=pos)
        x = self.norm1(x + tt.dropout(a, self.dropout, self.rng, self.training))
        f = self.ffn(x)
        return self.norm2(x + tt.dropout(f, self.dropout, self.rng, self.training))
