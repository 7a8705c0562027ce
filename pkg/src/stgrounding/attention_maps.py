"""Export of decoder attention maps as CSV matrices and PGM images.

Weights are averaged over heads and layers, then each timestep is divided by
its own maximum so the strongest weight at every step reads 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import DecoderOutput


@dataclass
class AttentionMaps:
    temporal: np.ndarray  # [T, T]; column t holds query t's weights
    spatial: np.ndarray  # [T, H, W]
    text: np.ndarray  # [T, L]


def _renorm_last(x: np.ndarray) -> np.ndarray:
    peak = x.max(axis=-1, keepdims=True)
    return np.divide(x, peak, out=np.zeros_like(x), where=peak > 0)


def renormalize_rows(x: np.ndarray) -> np.ndarray:
    return _renorm_last(np.asarray(x, dtype=np.float64))


def attention_maps(dec: DecoderOutput, HW: int, L: int, H: int, W: int, sample: int = 0) -> AttentionMaps:
    if not dec.cross:
        raise ValueError("decoder output has no recorded cross-attention weights")
    if not dec.A:
        raise ValueError("decoder output has no recorded temporal self-attention weights")
    if H * W != HW:
        raise ValueError(f"H*W = {H * W} does not match HW = {HW}")
    S = HW + L
    self_mean = np.mean([a.data[sample].mean(axis=0) for a in dec.A], axis=0)  # [T, T]
    temporal = renormalize_rows(self_mean).T
    T = self_mean.shape[0]
    blocks = []
    for layer in range(len(dec.cross)):
        dense = dec.dense_cross(layer)[sample].mean(axis=0)  # [T, T*S]
        blocks.append(np.stack([dense[t, t * S:(t + 1) * S] for t in range(T)]))
    per_frame = np.mean(blocks, axis=0)  # [T, S]
    spatial = renormalize_rows(per_frame[:, :HW]).reshape(T, H, W)
    text = renormalize_rows(per_frame[:, HW:])
    return AttentionMaps(temporal, spatial, text)


def write_csv(path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def write_pgm(path, image: np.ndarray) -> None:
    """Binary greyscale PGM (P5, maxval 255) from values in [0, 1]."""
    img = np.atleast_2d(np.asarray(image, dtype=np.float64))
    h, w = img.shape
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w)


def export_attention_maps(dec: DecoderOutput, HW: int, L: int, H: int, W: int, out_dir,
                          sample: int = 0) -> list[Path]:
    maps = attention_maps(dec, HW, L, H, W, sample)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(stem: str, matrix: np.ndarray) -> None:
        write_csv(out / f"{stem}.csv", matrix)
        write_pgm(out / f"{stem}.pgm", matrix)
        written.extend([out / f"{stem}.csv", out / f"{stem}.pgm"])

    emit("temporal_self_attention", maps.temporal)
    emit("text_cross_attention", maps.text)
    for t in range(maps.spatial.shape[0]):
        emit(f"spatial_cross_attention_t{t:03d}", maps.spatial[t])
    return written
