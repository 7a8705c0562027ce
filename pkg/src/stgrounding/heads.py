"""Box and start/end prediction heads applied to refined time queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .nn import MLP, Module
from .tensor import Tensor


@dataclass
class TubePrediction:
    boxes: Tensor  # [..., T, 4] (cx, cy, w, h) in (0, 1)
    start_logits: Tensor  # [..., T]
    end_logits: Tensor  # [..., T]
    start_prob: Tensor  # [..., T]
    end_prob: Tensor  # [..., T]

    @property
    def T(self) -> int:
        return self.boxes.shape[-2]

    def sample(self, i: int) -> "TubePrediction":
        """Numpy-backed prediction for one batch element."""
        return TubePrediction(*(Tensor(t.data[i]) for t in (
            self.boxes, self.start_logits, self.end_logits, self.start_prob, self.end_prob)))


class PredictionHeads(Module):
    def __init__(self, d: int, rng: np.random.Generator, temporal_dropout: float = 0.5):
        self.box_mlp = MLP([d, d, d, 4], rng)
        self.start_mlp = MLP([d, d, 1], rng)
        self.end_mlp = MLP([d, d, 1], rng)
        self.temporal_dropout = temporal_dropout

    def __call__(self, Q: Tensor) -> TubePrediction:
        return predict_tube(self, Q)


def predict_tube(heads: PredictionHeads, Q: Tensor) -> TubePrediction:
    boxes = tt.sigmoid(heads.box_mlp(Q))
    z = tt.dropout(Q, heads.temporal_dropout, heads.rng, heads.training)
    lead = Q.shape[:-1]
    start = heads.start_mlp(z).reshape(lead)
    end = heads.end_mlp(z).reshape(lead)
    return TubePrediction(boxes, start, end, tt.softmax_masked(start), tt.softmax_masked(end))
