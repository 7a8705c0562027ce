"""Spatio-temporal grounding metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import box_iou
from .inference import DecodedTube
from .losses import GroundTruthTube

THRESHOLDS = (0.3, 0.5)


def viou(decoded: DecodedTube, gt: GroundTruthTube) -> float:
    """Sum of per-frame IoU over the shared frames, divided by the union span size."""
    lo, hi = max(decoded.t_s, gt.t_s), min(decoded.t_e, gt.t_e)
    union = max(decoded.t_e, gt.t_e) - min(decoded.t_s, gt.t_s) + 1
    if hi < lo:
        return 0.0
    pred = decoded.boxes[lo - decoded.t_s: hi - decoded.t_s + 1]
    true = gt.boxes[lo - gt.t_s: hi - gt.t_s + 1]
    return float(box_iou(pred, true).sum() / union)


def tiou(decoded: DecodedTube, gt: GroundTruthTube) -> float:
    inter = min(decoded.t_e, gt.t_e) - max(decoded.t_s, gt.t_s) + 1
    union = max(decoded.t_e, gt.t_e) - min(decoded.t_s, gt.t_s) + 1
    return max(inter, 0) / union


def siou(all_boxes: np.ndarray, gt: GroundTruthTube) -> float:
    """Mean box IoU over the ground-truth span, ignoring the predicted span."""
    pred = np.asarray(all_boxes)[gt.t_s:gt.t_e + 1]
    return float(box_iou(pred, gt.boxes).mean())


def tiou_siou(decoded: DecodedTube, gt: GroundTruthTube, all_boxes: np.ndarray) -> tuple[float, float]:
    return tiou(decoded, gt), siou(all_boxes, gt)


@dataclass
class MetricReport:
    m_viou: float
    viou_at: dict[str, float]
    m_tiou: float
    m_siou: float
    n_samples: int
    per_sample_viou: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "m_viou": self.m_viou,
            "viou_at": dict(self.viou_at),
            "m_tiou": self.m_tiou,
            "m_siou": self.m_siou,
            "n_samples": self.n_samples,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def aggregate(vious, tious, sious, thresholds=THRESHOLDS) -> MetricReport:
    v = np.asarray(vious, dtype=np.float64)
    n = len(v)
    if n == 0:
        raise ValueError("no samples to aggregate")
    return MetricReport(
        m_viou=float(v.mean()),
        viou_at={str(r): float((v > r).mean()) for r in thresholds},
        m_tiou=float(np.mean(tious)),
        m_siou=float(np.mean(sious)),
        n_samples=n,
        per_sample_viou=[float(x) for x in v],
    )


def evaluate_tubes(decoded: list[DecodedTube], gts: list[GroundTruthTube],
                   all_boxes: list[np.ndarray]) -> MetricReport:
    if not len(decoded) == len(gts) == len(all_boxes):
        raise ValueError("decoded, ground truth and box lists differ in length")
    vs, ts, ss = [], [], []
    for d, g, b in zip(decoded, gts, all_boxes):
        vs.append(viou(d, g))
        ts.append(tiou(d, g))
        ss.append(siou(b, g))
    return aggregate(vs, ts, ss)
