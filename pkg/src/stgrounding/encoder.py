"""Slow-fast video-text encoder.

The slow branch runs joint visual-text self-attention on one frame per clip
of ``k`` frames; the fast branch is a cheap per-frame visual path fed through
a gradient barrier. Their outputs are merged per frame into ``F(v, s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .backbones import FrameFeatures, TextFeatures
from .nn import ConfigError, EncoderLayer, Linear, Module
from .tensor import Tensor, sinusoid_table

AGGREGATION_VARIANTS = ("sum_linear", "gated_product", "fast_transformer", "spatial_pooled")


@dataclass
class EncoderConfig:
    k: int = 4
    num_layers: int = 2
    d: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    aggregation_variant: str = "sum_linear"
    fast_enabled: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"temporal stride k must be >= 1, got {self.k}")
        if self.aggregation_variant not in AGGREGATION_VARIANTS:
            raise ConfigError(
                f"unknown aggregation variant '{self.aggregation_variant}'; "
                f"expected one of {AGGREGATION_VARIANTS}"
            )
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")

    @property
    def fast_active(self) -> bool:
        # with k = 1 nothing is lost to subsampling, so f and g are dropped
        return self.fast_enabled and self.k > 1


@dataclass
class SlowOutput:
    h: Tensor  # [..., M, HW + L, d]
    HW: int

    @property
    def M(self) -> int:
        return self.h.shape[-3]

    @property
    def h_v(self) -> Tensor:
        return self.h[..., : self.HW, :]

    @property
    def h_s(self) -> Tensor:
        return self.h[..., self.HW:, :]


@dataclass
class EncoderOutput:
    F: Tensor  # [..., T, HW + L, d]
    HW: int

    @property
    def T(self) -> int:
        return self.F.shape[-3]

    @property
    def F_v(self) -> Tensor:
        return self.F[..., : self.HW, :]

    @property
    def h_s(self) -> Tensor:
        return self.F[..., self.HW:, :]


def clip_count(T: int, k: int) -> int:
    return math.ceil(T / k)


def temporal_subsample(x0: Tensor, k: int) -> Tensor:
    """First frame of every clip of ``k`` frames: ``[..., T, HW, d] -> [..., M, HW, d]``."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    T = x0.shape[-3]
    if k == 1:
        return x0
    return tt.take(x0, np.arange(0, T, k), axis=-3)


def replicate_clips(h: Tensor, k: int, T: int) -> Tensor:
    """Repeat each clip ``k`` times along time and truncate to ``T`` frames."""
    M = h.shape[-3]
    if T > M * k:
        raise tt.ShapeError(f"T={T} exceeds M*k={M * k}")
    if k == 1 and T == M:
        return h
    return tt.take(h, np.arange(T) // k, axis=-3)


class SlowBranch(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.layers = [
            EncoderLayer(cfg.d, cfg.heads, cfg.ffn_dim, rng, cfg.dropout)
            for _ in range(cfg.num_layers)
        ]

    def __call__(self, x_p: Tensor, text: TextFeatures) -> SlowOutput:
        """Encode ``[B, M, HW, d]`` clip features jointly with ``[B, L, d]`` text."""
        y0 = text.features
        if x_p.ndim != 4 or y0.ndim != 3 or x_p.shape[0] != y0.shape[0]:
            raise tt.ShapeError(f"slow branch expects [B,M,HW,d] and [B,L,d], got {x_p.shape}, {y0.shape}")
        if x_p.shape[-1] != y0.shape[-1]:
            raise tt.ShapeError(f"feature dims differ: {x_p.shape[-1]} vs {y0.shape[-1]}")
        B, M, HW, d = x_p.shape
        L = y0.shape[1]
        y = tt.broadcast_to(y0.reshape(B, 1, L, d), (B, M, L, d))
        x = tt.concat([x_p, y], axis=2).reshape(B * M, HW + L, d)
        key_mask = np.concatenate(
            [np.ones((B, HW), dtype=bool), np.asarray(text.mask, dtype=bool)], axis=1
        )
        key_mask = np.repeat(key_mask, M, axis=0)
        for layer in self.layers:
            x = layer(x, key_mask=key_mask)
        return SlowOutput(x.reshape(B, M, HW + L, d), HW)


class FastBranch(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.variant = cfg.aggregation_variant
        self.proj = Linear(cfg.d, cfg.d, rng)
        if self.variant == "fast_transformer":
            self.temporal = EncoderLayer(cfg.d, cfg.heads, cfg.ffn_dim, rng, cfg.dropout)

    def __call__(self, x0: Tensor) -> Tensor:
        x = tt.stop_gradient(x0)
        if self.variant == "spatial_pooled":
            HW = x.shape[-2]
            pooled = self.proj(x.mean(axis=-2, keepdims=True))
            return tt.broadcast_to(pooled, pooled.shape[:-2] + (HW, pooled.shape[-1]))
        if self.variant == "fast_transformer":
            B, T, HW, d = x.shape
            seq = (x + sinusoid_table(T, d)[:, None, :]).transpose(0, 2, 1, 3)
            seq = self.temporal(seq.reshape(B * HW, T, d))
            x = seq.reshape(B, HW, T, d).transpose(0, 2, 1, 3)
        return self.proj(x)


class Aggregation(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.variant = cfg.aggregation_variant
        if self.variant != "gated_product":
            self.proj = Linear(cfg.d, cfg.d, rng)

    def __call__(self, h_v: Tensor, f: Tensor) -> Tensor:
        if self.variant == "gated_product":
            return tt.sigmoid(h_v * f)
        return self.proj(h_v + f)


class VideoTextEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.slow = SlowBranch(cfg, rng)
        if cfg.fast_active:
            self.fast = FastBranch(cfg, rng)
            self.aggregate = Aggregation(cfg, rng)

    def __call__(self, frames: FrameFeatures, text: TextFeatures) -> EncoderOutput:
        x0 = frames.with_pos()
        slow = self.slow(temporal_subsample(x0, self.cfg.k), text)
        fast = self.fast(x0) if self.cfg.fast_active else None
        return aggregate_slow_fast(slow, fast, x0.shape[-3], self.cfg.k,
                                   self.aggregate if fast is not None else None)


def fast_branch(encoder: VideoTextEncoder, frames: FrameFeatures) -> Tensor:
    if not encoder.cfg.fast_active:
        raise ConfigError("fast branch is disabled (fast_enabled=False or k=1)")
    return encoder.fast(frames.with_pos())


def aggregate_slow_fast(slow: SlowOutput, fast: Tensor | None, T: int, k: int,
                        g: Aggregation | None) -> EncoderOutput:
    """``F = [g(h_v, f) + h_v, h_s]`` with ``h`` replicated to ``T`` frames."""
    h = replicate_clips(slow.h, k, T)
    if fast is None:
        return EncoderOutput(h, slow.HW)
    if fast.shape[-3] != T:
        raise tt.ShapeError(f"fast branch has {fast.shape[-3]} frames, expected {T}")
    h_v = h[..., : slow.HW, :]
    h_s = h[..., slow.HW:, :]
    F_v = g(h_v, fast) + h_v
    return EncoderOutput(tt.concat([F_v, h_s], axis=-2), slow.HW)
