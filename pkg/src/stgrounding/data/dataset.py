"""Loading a generated corpus from disk and batching samples."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..backbones import Vocabulary, pad_token_ids
from ..losses import GroundTruthTube
from .augment import augment_sample
from .media import AnnotationRecord, FormatError, read_annotation, read_frames


@dataclass
class Sample:
    frames: np.ndarray  # [T, C, H, W] float32
    ann: AnnotationRecord


@dataclass
class Batch:
    frames: np.ndarray  # [B, T, C, H, W]
    token_ids: np.ndarray  # [B, L]
    tubes: list[GroundTruthTube]
    anns: list[AnnotationRecord]


def read_index(root) -> dict:
    path = Path(root) / "index.json"
    if not path.exists():
        raise FormatError(f"{path}: dataset index not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from None


def load_split(root, split: str) -> list[Sample]:
    root = Path(root)
    index = read_index(root)
    if split == "all":
        ids = index["train"] + index["val"]
    elif split in ("train", "val"):
        ids = index[split]
    else:
        raise ValueError(f"unknown split {split!r}; expected train, val or all")
    out = []
    for vid in ids:
        frames = read_frames(root / "videos" / f"{vid}.vtfr")
        ann = read_annotation(root / "annotations" / f"{vid}.json")
        if frames.shape[0] != ann.T:
            raise FormatError(f"{vid}: frame file has T={frames.shape[0]}, annotation says T={ann.T}")
        out.append(Sample(frames, ann))
    return out


def load_vocabulary(root) -> Vocabulary:
    return Vocabulary.load(Path(root) / "vocab.json")


def collate(samples: list[Sample], vocab: Vocabulary) -> Batch:
    T = {s.frames.shape[0] for s in samples}
    if len(T) != 1:
        raise ValueError(f"samples in a batch must share T, got {sorted(T)}")
    frames = np.stack([s.frames for s in samples])
    ids = pad_token_ids([vocab.encode(s.ann.query) for s in samples])
    anns = [s.ann for s in samples]
    return Batch(frames, ids, [a.tube() for a in anns], anns)


def augment_batch(samples: list[Sample], rng: np.random.Generator) -> list[Sample]:
    """Augment each sample with one temporal window length shared by the batch."""
    T = min(s.frames.shape[0] for s in samples)
    span = max(s.ann.t_e - s.ann.t_s + 1 for s in samples)
    window = int(rng.integers(span, T + 1))
    return [Sample(*augment_sample(s.frames, s.ann, rng, True, window)) for s in samples]


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index batches over one epoch, shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        yield [int(j) for j in order[i:i + batch_size]]
