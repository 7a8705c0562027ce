"""Turning start/end distributions and per-frame boxes into a tube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import TubePrediction


@dataclass
class DecodedTube:
    t_s: int
    t_e: int
    boxes: np.ndarray  # [t_e - t_s + 1, 4]

    def frames(self) -> range:
        return range(self.t_s, self.t_e + 1)

    def to_json(self) -> dict:
        return {"t_s": self.t_s, "t_e": self.t_e, "boxes": self.boxes.tolist()}


def best_pair(p_start: np.ndarray, p_end: np.ndarray) -> tuple[int, int]:
    """Argmax of ``p_start[i] * p_end[j]`` over ``j > i``.

    Ties go to the smallest ``i``, then the smallest ``j`` (row-major argmax).
    """
    p_start = np.asarray(p_start, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    T = p_start.shape[-1]
    if T < 2:
        raise ValueError(f"need T >= 2 to pick a start strictly before the end, got T={T}")
    joint = p_start[:, None] * p_end[None, :]
    joint = np.where(np.triu(np.ones((T, T), dtype=bool), k=1), joint, -np.inf)
    flat = int(np.argmax(joint))
    return flat // T, flat % T


def decode_tube(pred: TubePrediction) -> DecodedTube:
    t_s, t_e = best_pair(pred.start_prob.data, pred.end_prob.data)
    return DecodedTube(t_s, t_e, pred.boxes.data[t_s:t_e + 1].copy())
