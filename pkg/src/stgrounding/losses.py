"""Training objective: box L1 + gIoU, start/end KL and guided attention.

Every term is evaluated for each decoder layer's predictions and the layer
totals are summed. Batched inputs are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tt
from .boxes import cxcywh_to_xyxy, cxcywh_to_xyxy_t, generalized_iou
from .heads import TubePrediction
from .tensor import LOG_EPS, Tensor

NORMALIZATION_TOL = 1e-6


@dataclass
class LossWeights:
    l1: float = 5.0
    giou: float = 2.0
    kl: float = 10.0
    att: float = 1.0

    def __post_init__(self):
        for name in ("l1", "giou", "kl", "att"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight '{name}' must be nonnegative")


def target_distribution(center: int, T: int, sigma: float = 1.0) -> np.ndarray:
    """Unit-variance Gaussian sampled at integer frames and normalized."""
    if not 0 <= center <= T - 1:
        raise ValueError(f"center {center} outside [0, {T - 1}]")
    i = np.arange(T, dtype=np.float64)
    w = np.exp(-((i - center) ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


@dataclass
class GroundTruthTube:
    t_s: int
    t_e: int
    boxes: np.ndarray  # [t_e - t_s + 1, 4] (cx, cy, w, h)
    T: int

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if not 0 <= self.t_s <= self.t_e <= self.T - 1:
            raise ValueError(f"invalid interval [{self.t_s}, {self.t_e}] for T={self.T}")
        if len(self.boxes) != self.t_e - self.t_s + 1:
            raise ValueError(
                f"{len(self.boxes)} boxes for interval [{self.t_s}, {self.t_e}] "
                f"({self.t_e - self.t_s + 1} frames)"
            )

    @property
    def tau_s(self) -> np.ndarray:
        return target_distribution(self.t_s, self.T)

    @property
    def tau_e(self) -> np.ndarray:
        return target_distribution(self.t_e, self.T)

    def frames(self) -> range:
        return range(self.t_s, self.t_e + 1)


_FILLER_BOX = np.array([0.5, 0.5, 0.5, 0.5])


@dataclass
class TargetBatch:
    """Tubes laid out on the full ``[B, T]`` frame grid."""

    boxes: np.ndarray  # [B, T, 4], filler outside the segment
    segment: np.ndarray  # [B, T] bool
    tau_s: np.ndarray  # [B, T]
    tau_e: np.ndarray  # [B, T]

    @classmethod
    def from_tubes(cls, tubes: Sequence[GroundTruthTube]) -> "TargetBatch":
        T = tubes[0].T
        if any(g.T != T for g in tubes):
            raise ValueError("all tubes in a batch must share T")
        B = len(tubes)
        boxes = np.broadcast_to(_FILLER_BOX, (B, T, 4)).copy()
        seg = np.zeros((B, T), dtype=bool)
        for i, g in enumerate(tubes):
            boxes[i, g.t_s:g.t_e + 1] = g.boxes
            seg[i, g.t_s:g.t_e + 1] = True
        return cls(boxes, seg, np.stack([g.tau_s for g in tubes]), np.stack([g.tau_e for g in tubes]))

    @property
    def frame_weights(self) -> np.ndarray:
        return self.segment / self.segment.sum(axis=-1, keepdims=True)


def _as_batch(gt) -> tuple[TargetBatch, bool]:
    if isinstance(gt, TargetBatch):
        return gt, False
    if isinstance(gt, GroundTruthTube):
        return TargetBatch.from_tubes([gt]), True
    return TargetBatch.from_tubes(list(gt)), False


def _lift(x: Tensor, single: bool) -> Tensor:
    return x.reshape((1,) + x.shape) if single else x


def spatial_losses(pred_boxes: Tensor, gt) -> tuple[Tensor, Tensor]:
    """Mean per-frame L1 (summed over coords) and 1 - gIoU over the GT segment."""
    tb, single = _as_batch(gt)
    b = _lift(pred_boxes, single)
    if b.shape != tb.boxes.shape:
        raise tt.ShapeError(f"predicted boxes {b.shape} vs targets {tb.boxes.shape}")
    w = tb.frame_weights
    B = b.shape[0]
    l1 = (tt.absolute(b - tb.boxes).sum(axis=-1) * w).sum() * (1.0 / B)
    giou = generalized_iou(cxcywh_to_xyxy_t(b), cxcywh_to_xyxy(tb.boxes))
    lg = ((1.0 - giou) * w).sum() * (1.0 / B)
    return l1, lg


def _check_normalized(p: Tensor, what: str) -> None:
    s = p.data.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > NORMALIZATION_TOL):
        raise ValueError(f"{what} is not normalized (row sums {s.ravel()[:4]}...)")


def kl_divergence(target: np.ndarray, pred: Tensor) -> Tensor:
    """``sum target * (log target - log pred)`` with both logs clamped at 1e-12."""
    target = np.asarray(target, dtype=np.float64)
    log_target = np.log(np.maximum(target, LOG_EPS))
    return (Tensor(target) * (log_target - tt.log(tt.clamp_min(pred, LOG_EPS)))).sum()


def kl_loss(pred_s: Tensor, pred_e: Tensor, gt) -> Tensor:
    tb, single = _as_batch(gt)
    total = None
    for pred, target, what in ((pred_s, tb.tau_s, "start"), (pred_e, tb.tau_e, "end")):
        p = _lift(pred, single)
        _check_normalized(p, f"{what} distribution")
        kl = kl_divergence(target, p)
        total = kl if total is None else total + kl
    return total * (1.0 / tb.tau_s.shape[0])


def attention_loss(A: Tensor, gt) -> Tensor:
    """``-mean_rows log(in-segment mass)`` of the head-averaged self-attention.

    ``A`` is ``[B, heads, T, T]`` (or ``[heads, T, T]`` for one sample).
    """
    tb, single = _as_batch(gt)
    A = _lift(A, single)
    _check_normalized(A, "attention matrix")
    mean_a = A.mean(axis=1)
    mass = (mean_a * tb.segment[:, None, :].astype(np.float64)).sum(axis=-1)
    B, T = mass.shape
    return -(tt.log(mass + LOG_EPS)).sum() * (1.0 / (B * T))


def temporal_losses(pred_s: Tensor, pred_e: Tensor, gt, A: Tensor | None) -> tuple[Tensor, Tensor]:
    l_kl = kl_loss(pred_s, pred_e, gt)
    l_att = attention_loss(A, gt) if A is not None else Tensor(0.0)
    return l_kl, l_att


def combine(components: dict[str, float | Tensor], w: LossWeights):
    return (w.l1 * components["l1"] + w.giou * components["giou"]
            + w.kl * components["kl"] + w.att * components["att"])


def total_loss(predictions: Sequence[TubePrediction], attention: Sequence[Tensor] | None,
               gt, w: LossWeights | None = None) -> tuple[Tensor, dict[str, float]]:
    """Sum over decoder layers of the weighted four-term objective.

    ``attention`` holds one self-attention tensor per layer, or is empty when
    the decoder has no temporal self-attention. Returns the scalar loss and
    the unweighted per-term totals (summed over layers) for logging.
    """
    w = w or LossWeights()
    if not predictions:
        raise ValueError("total_loss needs at least one layer of predictions")
    attention = list(attention or [])
    if attention and len(attention) != len(predictions):
        raise ValueError(
            f"{len(predictions)} prediction layers but {len(attention)} attention layers"
        )
    tb, single = _as_batch(gt)
    terms = {"l1": 0.0, "giou": 0.0, "kl": 0.0, "att": 0.0}
    loss = None
    for i, pred in enumerate(predictions):
        boxes = pred.boxes
        if single:
            boxes = _lift(boxes, True)
        parts = []
        if w.l1 or w.giou:
            l1, lg = spatial_losses(boxes, tb)
            terms["l1"] += l1.item()
            terms["giou"] += lg.item()
            if w.l1:
                parts.append(l1 * w.l1)
            if w.giou:
                parts.append(lg * w.giou)
        if w.kl:
            l_kl = kl_loss(_lift(pred.start_prob, single), _lift(pred.end_prob, single), tb)
            terms["kl"] += l_kl.item()
            parts.append(l_kl * w.kl)
        if w.att and attention:
            l_att = attention_loss(_lift(attention[i], single), tb)
            terms["att"] += l_att.item()
            parts.append(l_att * w.att)
        for p in parts:
            loss = p if loss is None else loss + p
    if loss is None:
        loss = Tensor(0.0)
    return loss, terms
