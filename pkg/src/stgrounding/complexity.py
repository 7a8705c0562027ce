"""Closed-form attention cost accounting for encoder and decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction


@dataclass
class ComplexityReport:
    T: int
    HW: int
    L: int
    k: int
    N: int
    d: int
    heads: int
    clips: int
    encoder_slow_entries: int
    encoder_dense_entries: int
    encoder_ratio: float
    decoder_self_entries: int
    decoder_cross_entries: int
    activation_floats: int

    @property
    def encoder_ratio_exact(self) -> Fraction:
        return Fraction(self.encoder_slow_entries, self.encoder_dense_entries)

    def to_json(self) -> dict:
        return asdict(self)


def complexity_report(T: int, HW: int, L: int, k: int, N: int, d: int, heads: int) -> ComplexityReport:
    """Attention score counts for the given sizes.

    ``activation_floats`` counts the tensors a training step keeps per layer:
    encoder token states and score matrices, fast-branch features, decoder
    query states plus self and time-aligned cross scores.
    """
    for name, v in dict(T=T, HW=HW, L=L, k=k, N=N, d=d, heads=heads).items():
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    S = HW + L
    M = math.ceil(T / k)
    slow = N * heads * M * S * S
    dense = N * heads * T * S * S
    dec_self = N * heads * T * T
    dec_cross = N * heads * T * S
    fast = T * HW * d if k > 1 else 0
    activations = (
        N * (M * S * d + heads * M * S * S)
        + fast
        + N * (T * d + heads * T * T + heads * T * S)
    )
    return ComplexityReport(
        T=T, HW=HW, L=L, k=k, N=N, d=d, heads=heads, clips=M,
        encoder_slow_entries=slow,
        encoder_dense_entries=dense,
        encoder_ratio=slow / dense,
        decoder_self_entries=dec_self,
        decoder_cross_entries=dec_cross,
        activation_floats=activations,
    )
