"""Training-time temporal and spatial random crops that keep the tube intact."""

from __future__ import annotations

import numpy as np

from .media import AnnotationRecord


def temporal_window(T: int, t_s: int, t_e: int, length: int, rng: np.random.Generator) -> tuple[int, int]:
    """Random start and length of a ``length``-frame window containing ``[t_s, t_e]``."""
    length = max(length, t_e - t_s + 1)
    length = min(length, T)
    lo = max(0, t_e - length + 1)
    hi = min(t_s, T - length)
    return int(rng.integers(lo, hi + 1)), length


def resize_bilinear(frames: np.ndarray, H: int, W: int) -> np.ndarray:
    """Align-corners-free bilinear resize of ``[T, C, h, w]`` to ``[T, C, H, W]``."""
    T, C, h, w = frames.shape
    if (h, w) == (H, W):
        return frames.copy()
    ys = np.clip((np.arange(H) + 0.5) * h / H - 0.5, 0, h - 1)
    xs = np.clip((np.arange(W) + 0.5) * w / W - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    f = frames.astype(np.float64)
    top = f[..., y0, :][..., x0] * (1 - wx) + f[..., y0, :][..., x1] * wx
    bot = f[..., y1, :][..., x0] * (1 - wx) + f[..., y1, :][..., x1] * wx
    return (top * (1 - wy) + bot * wy).astype(frames.dtype)


def spatial_crop_box(boxes: np.ndarray, H: int, W: int, rng: np.random.Generator,
                     min_scale: float = 0.7) -> tuple[int, int, int, int]:
    """Pixel crop ``(x0, y0, x1, y1)`` that contains every box in ``boxes``."""
    cx, cy, w, h = boxes.T
    bx0 = int(np.floor(np.min(cx - w / 2) * W))
    by0 = int(np.floor(np.min(cy - h / 2) * H))
    bx1 = int(np.ceil(np.max(cx + w / 2) * W))
    by1 = int(np.ceil(np.max(cy + h / 2) * H))
    bx0, by0 = max(bx0, 0), max(by0, 0)
    bx1, by1 = min(bx1, W), min(by1, H)
    cw = int(rng.integers(max(bx1 - bx0, int(np.ceil(min_scale * W))), W + 1))
    ch = int(rng.integers(max(by1 - by0, int(np.ceil(min_scale * H))), H + 1))
    x0 = int(rng.integers(max(0, bx1 - cw), min(bx0, W - cw) + 1))
    y0 = int(rng.integers(max(0, by1 - ch), min(by0, H - ch) + 1))
    return x0, y0, x0 + cw, y0 + ch


def recompute_boxes(boxes: np.ndarray, crop: tuple[int, int, int, int], H: int, W: int) -> np.ndarray:
    x0, y0, x1, y1 = crop
    cw, ch = x1 - x0, y1 - y0
    out = boxes.copy()
    out[:, 0] = (boxes[:, 0] * W - x0) / cw
    out[:, 1] = (boxes[:, 1] * H - y0) / ch
    out[:, 2] = boxes[:, 2] * W / cw
    out[:, 3] = boxes[:, 3] * H / ch
    return np.clip(out, 0.0, 1.0)


def augment_sample(frames: np.ndarray, ann: AnnotationRecord, rng: np.random.Generator,
                   enabled: bool = True, window: int | None = None,
                   spatial: bool = True) -> tuple[np.ndarray, AnnotationRecord]:
    """Crop in time around the GT interval and in space around all GT boxes.

    ``window`` fixes the temporal crop length (shared across a batch so the
    samples can be stacked); by default it is drawn from ``[span, T]``.
    The canvas is resized back to its original size after the spatial crop.
    """
    if not enabled:
        return frames, ann
    T, _, H, W = frames.shape
    span = ann.t_e - ann.t_s + 1
    length = int(rng.integers(span, T + 1)) if window is None else window
    start, length = temporal_window(T, ann.t_s, ann.t_e, length, rng)
    frames = frames[start:start + length]
    t_s, t_e = ann.t_s - start, ann.t_e - start
    boxes = ann.boxes
    if spatial:
        crop = spatial_crop_box(boxes, H, W, rng)
        x0, y0, x1, y1 = crop
        frames = resize_bilinear(frames[:, :, y0:y1, x0:x1], H, W)
        boxes = recompute_boxes(boxes, crop, H, W)
    out = AnnotationRecord(ann.video_id, len(frames), ann.query, t_s, t_e, boxes,
                           ann.seed, ann.renderer)
    return frames, out
