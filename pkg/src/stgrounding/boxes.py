"""Box format conversion and overlap measures (numpy and differentiable)."""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = np.moveaxis(b, -1, 0)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x1, y1, x2, y2 = np.moveaxis(b, -1, 0)
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of (cx, cy, w, h) boxes broadcasting over leading dims."""
    pa, pb = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    iw = np.clip(np.minimum(pa[..., 2], pb[..., 2]) - np.maximum(pa[..., 0], pb[..., 0]), 0, None)
    ih = np.clip(np.minimum(pa[..., 3], pb[..., 3]) - np.maximum(pa[..., 1], pb[..., 1]), 0, None)
    inter = iw * ih
    area_a = (pa[..., 2] - pa[..., 0]) * (pa[..., 3] - pa[..., 1])
    area_b = (pb[..., 2] - pb[..., 0]) * (pb[..., 3] - pb[..., 1])
    union = area_a + area_b - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def cxcywh_to_xyxy_t(b: Tensor) -> list[Tensor]:
    cx, cy, w, h = (b[..., i] for i in range(4))
    hw, hh = w * 0.5, h * 0.5
    return [cx - hw, cy - hh, cx + hw, cy + hh]


def generalized_iou(pred: list[Tensor], gt: np.ndarray) -> Tensor:
    """gIoU between corner-form predicted coordinates and corner-form ``gt``.

    ``pred`` is ``[x1, y1, x2, y2]`` tensors, ``gt`` an array ``[..., 4]``.
    """
    px1, py1, px2, py2 = pred
    gx1, gy1, gx2, gy2 = (gt[..., i] for i in range(4))
    iw = tt.clamp_min(tt.minimum(px2, gx2) - tt.maximum(px1, gx1), 0.0)
    ih = tt.clamp_min(tt.minimum(py2, gy2) - tt.maximum(py1, gy1), 0.0)
    inter = iw * ih
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = area_p + area_g - inter
    hull = (tt.maximum(px2, gx2) - tt.minimum(px1, gx1)) * (tt.maximum(py2, gy2) - tt.minimum(py1, gy1))
    return inter / union - (hull - union) / hull
