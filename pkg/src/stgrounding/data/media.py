"""Frame files (VTFR) and annotation JSON records."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..losses import GroundTruthTube

MAGIC = b"VTFR"
HEADER = struct.Struct("<4s4I")


class FormatError(ValueError):
    pass


class ValidationError(ValueError):
    pass


def encode_frames(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise FormatError(f"frames must be [T, C, H, W], got shape {frames.shape}")
    payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    return HEADER.pack(MAGIC, *frames.shape) + payload


def decode_frames(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < HEADER.size:
        raise FormatError(
            f"{source}: truncated header, expected {HEADER.size} bytes, got {len(raw)}"
        )
    magic, T, C, H, W = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if min(T, C, H, W) == 0:
        raise FormatError(f"{source}: zero dimension in header at offset 4: {(T, C, H, W)}")
    expected = HEADER.size + 4 * T * C * H * W
    if len(raw) != expected:
        raise FormatError(
            f"{source}: expected {expected} bytes for dims {(T, C, H, W)}, got {len(raw)}"
            f" (payload starts at offset {HEADER.size})"
        )
    return np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(T, C, H, W).astype(np.float32)


def write_frames(path, frames: np.ndarray) -> None:
    Path(path).write_bytes(encode_frames(frames))


def read_frames(path) -> np.ndarray:
    return decode_frames(Path(path).read_bytes(), str(path))


@dataclass
class AnnotationRecord:
    video_id: str
    T: int
    query: str
    t_s: int
    t_e: int
    boxes: np.ndarray  # [t_e - t_s + 1, 4] (cx, cy, w, h)
    seed: int = 0
    renderer: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.validate()

    def validate(self) -> None:
        if not self.query.strip():
            raise ValidationError(f"{self.video_id}: empty query")
        if not 0 <= self.t_s <= self.t_e <= self.T - 1:
            raise ValidationError(
                f"{self.video_id}: invalid interval t_s={self.t_s}, t_e={self.t_e} for T={self.T}"
            )
        n = self.t_e - self.t_s + 1
        if len(self.boxes) != n:
            raise ValidationError(
                f"{self.video_id}: {len(self.boxes)} boxes for a {n}-frame interval"
            )
        if np.any(self.boxes < 0) or np.any(self.boxes > 1):
            raise ValidationError(f"{self.video_id}: box coordinates outside [0, 1]")
        if np.any(self.boxes[:, 2:] <= 0):
            raise ValidationError(f"{self.video_id}: degenerate box with zero width or height")

    def tube(self) -> GroundTruthTube:
        return GroundTruthTube(self.t_s, self.t_e, self.boxes, self.T)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "T": self.T,
            "query": self.query,
            "t_s": self.t_s,
            "t_e": self.t_e,
            "boxes": self.boxes.tolist(),
            "seed": self.seed,
            "renderer": self.renderer,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotationRecord":
        try:
            return cls(
                video_id=str(obj["video_id"]), T=int(obj["T"]), query=str(obj["query"]),
                t_s=int(obj["t_s"]), t_e=int(obj["t_e"]), boxes=np.asarray(obj["boxes"], dtype=np.float64),
                seed=int(obj.get("seed", 0)), renderer=dict(obj.get("renderer", {})),
            )
        except KeyError as e:
            raise ValidationError(f"annotation missing field {e}") from None


def write_annotation(path, record: AnnotationRecord) -> None:
    Path(path).write_text(json.dumps(record.to_json(), indent=1, sort_keys=True) + "\n")


def read_annotation(path) -> AnnotationRecord:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from None
    return AnnotationRecord.from_json(obj)
