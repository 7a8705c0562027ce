"""Space-time decoder over per-frame time queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .encoder import EncoderOutput
from .nn import ConfigError, FeedForward, LayerNorm, Module, MultiheadAttention
from .tensor import Tensor, sinusoid_table


@dataclass
class DecoderAblation:
    use_time_encoding: bool = True
    use_temporal_self_attention: bool = True


@dataclass
class DecoderConfig:
    num_layers: int = 2
    d: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    # "blocked" evaluates each frame's keys separately; "dense" applies the
    # block-diagonal mask to all T*(HW+L) keys. Both give the same attention.
    cross_attention: str = "blocked"

    def __post_init__(self):
        if self.cross_attention not in ("blocked", "dense"):
            raise ConfigError(f"cross_attention must be 'blocked' or 'dense', got {self.cross_attention!r}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")


def build_time_queries(T: int, d: int, object_encoding: Tensor,
                       ablation: DecoderAblation | None = None) -> Tensor:
    """``q_t = object_encoding + PE(t)``, or just the shared encoding when ablated."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if d % 2:
        raise ConfigError(f"time encoding needs an even dimension, got d={d}")
    if object_encoding.shape not in ((d,), (1, d)):
        raise tt.ShapeError(f"object encoding shape {object_encoding.shape}, expected (1, {d})")
    ablation = ablation or DecoderAblation()
    base = object_encoding.reshape(1, d)
    if ablation.use_time_encoding:
        return base + sinusoid_table(T, d)
    return tt.broadcast_to(base, (T, d))


def build_cross_attention_mask(T: int, HW: int, L: int) -> np.ndarray:
    """Block-diagonal ``[T, T*(HW+L)]`` mask; row t allows only frame t's tokens."""
    if T < 1 or HW < 1 or L < 1:
        raise ValueError(f"T, HW, L must be positive, got {T}, {HW}, {L}")
    return _block_mask(T, HW + L)


def _block_mask(T: int, S: int) -> np.ndarray:
    return np.kron(np.eye(T, dtype=bool), np.ones((1, S), dtype=bool))


def expand_cross_weights(blocked: np.ndarray) -> np.ndarray:
    """``[B, T, heads, S]`` per-frame weights to dense ``[B, heads, T, T*S]``."""
    B, T, H, S = blocked.shape
    dense = np.zeros((B, H, T, T * S))
    for t in range(T):
        dense[:, :, t, t * S:(t + 1) * S] = blocked[:, t]
    return dense


@dataclass
class DecoderOutput:
    queries: Tensor  # [B, T, d] decoder input
    Q: list[Tensor] = field(default_factory=list)  # per layer [B, T, d]
    A: list[Tensor] = field(default_factory=list)  # per layer [B, heads, T, T]
    # per layer cross-attention weights, [B, T, heads, S] when blocked or
    # [B, heads, T, T*S] when dense; see ``dense_cross``
    cross: list[np.ndarray] = field(default_factory=list)
    cross_layout: str = "blocked"

    @property
    def final(self) -> Tensor:
        return self.Q[-1] if self.Q else self.queries

    def dense_cross(self, layer: int) -> np.ndarray:
        """Layer ``layer`` cross-attention as ``[B, heads, T, T*(HW+L)]``."""
        w = self.cross[layer]
        return expand_cross_weights(w) if self.cross_layout == "blocked" else w

    def A_stack(self) -> np.ndarray:
        """Self-attention weights as ``[N, B, heads, T, T]``."""
        return np.stack([a.data for a in self.A]) if self.A else np.zeros((0,))


class DecoderBlock(Module):
    def __init__(self, cfg: DecoderConfig, ablation: DecoderAblation, rng: np.random.Generator):
        self.dropout = cfg.dropout
        self.heads = cfg.heads
        self.dense = cfg.cross_attention == "dense"
        if ablation.use_temporal_self_attention:
            self.self_attn = MultiheadAttention(cfg.d, cfg.heads, rng, cfg.dropout)
            self.norm1 = LayerNorm(cfg.d)
        else:
            self.self_attn = None
        self.cross_attn = MultiheadAttention(cfg.d, cfg.heads, rng, cfg.dropout)
        self.norm2 = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim, rng, cfg.dropout)
        self.norm3 = LayerNorm(cfg.d)

    def _drop(self, x: Tensor) -> Tensor:
        return tt.dropout(x, self.dropout, self.rng, self.training)

    def __call__(self, x: Tensor, F: Tensor, key_mask: np.ndarray):
        """``x``: [B, T, d]; ``F``: [B, T, S, d]; ``key_mask``: [B, S] (True = real token)."""
        B, T, S, d = F.shape
        A = None
        if self.self_attn is not None:
            a, A = self.self_attn(x, x, x)
            x = self.norm1(x + self._drop(a))
        if self.dense:
            keys = F.reshape(B, T * S, d)
            mask = _block_mask(T, S)[None] & np.tile(key_mask, (1, T))[:, None, :]
            c, w = self.cross_attn(x, keys, keys, mask)
            cross = w.data
        else:
            q = x.reshape(B, T, 1, d)
            mask = np.broadcast_to(key_mask[:, None, None, :], (B, T, 1, S))
            c, w = self.cross_attn(q, F, F, mask)
            c = c.reshape(B, T, d)
            cross = w.data[:, :, :, 0, :]
        x = self.norm2(x + self._drop(c))
        x = self.norm3(x + self._drop(self.ffn(x)))
        return x, A, cross


class SpaceTimeDecoder(Module):
    def __init__(self, cfg: DecoderConfig, ablation: DecoderAblation, rng: np.random.Generator):
        self.cfg = cfg
        self.ablation = ablation
        self.object_encoding = Tensor(rng.normal(0.0, 1.0, size=(1, cfg.d)), requires_grad=True)
        self.blocks = [DecoderBlock(cfg, ablation, rng) for _ in range(cfg.num_layers)]

    def __call__(self, enc: EncoderOutput, text_mask: np.ndarray | None = None) -> DecoderOutput:
        F = enc.F
        if F.ndim == 3:
            F = F.reshape((1,) + F.shape)
        B, T, S, d = F.shape
        if d != self.cfg.d:
            raise tt.ShapeError(f"encoder feature dim {d} does not match decoder d={self.cfg.d}")
        key_mask = np.ones((B, S), dtype=bool)
        if text_mask is not None:
            key_mask[:, enc.HW:] = np.asarray(text_mask, dtype=bool).reshape(B, -1)
        q = build_time_queries(T, d, self.object_encoding, self.ablation)
        return run_decoder(self, tt.broadcast_to(q, (B, T, d)), F, key_mask)


def run_decoder(decoder: SpaceTimeDecoder, queries: Tensor, F: Tensor,
                key_mask: np.ndarray | None = None) -> DecoderOutput:
    """Refine ``[B, T, d]`` queries against ``[B, T, S, d]`` features block by block."""
    if queries.ndim != 3 or F.ndim != 4 or queries.shape[:2] != F.shape[:2]:
        raise tt.ShapeError(f"queries {queries.shape} do not match features {F.shape}")
    if key_mask is None:
        key_mask = np.ones((F.shape[0], F.shape[2]), dtype=bool)
    out = DecoderOutput(queries, cross_layout=decoder.cfg.cross_attention)
    x = queries
    for block in decoder.blocks:
        x, A, cross = block(x, F, key_mask)
        out.Q.append(x)
        if A is not None:
            out.A.append(A)
        out.cross.append(cross)
    return out
