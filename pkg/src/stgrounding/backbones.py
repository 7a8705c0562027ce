"""Toy visual and text backbones producing frame and token features."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Embedding, EncoderLayer, Linear, Module
from .tensor import Tensor, sinusoid_table

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    """Closed word vocabulary; id 0 is padding, id 1 the unknown token."""

    pad_id = 0
    unk_id = 1

    def __init__(self, words):
        self.tokens: list[str] = [PAD, UNK]
        for w in words:
            w = w.lower()
            if w not in self.tokens:
                self.tokens.append(w)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def tokenize(query: str) -> list[str]:
        return query.lower().split()

    def encode(self, query: str) -> list[int]:
        words = self.tokenize(query)
        if not words:
            raise ValueError("empty query")
        return [self.index.get(w, self.unk_id) for w in words]

    def to_json(self) -> dict:
        return {"tokens": self.tokens, "pad_id": self.pad_id, "unk_id": self.unk_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        tokens = obj["tokens"]
        if tokens[:2] != [PAD, UNK] or obj.get("pad_id", 0) != 0 or obj.get("unk_id", 1) != 1:
            raise ValueError("vocabulary must reserve id 0 for padding and id 1 for unknown")
        return cls(tokens[2:])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def sinusoid_2d(h: int, w: int, d: int) -> np.ndarray:
    """Grid encoding: row code in the first d/2 channels, column code in the rest."""
    if d % 4:
        raise ValueError(f"2D sinusoidal encoding needs d divisible by 4, got {d}")
    rows = sinusoid_table(h, d // 2)
    cols = sinusoid_table(w, d // 2)
    return np.concatenate([np.repeat(rows, w, axis=0), np.tile(cols, (h, 1))], axis=1)


@dataclass
class FrameFeatures:
    tokens: Tensor  # [..., T, HW, d], before positional encoding
    pos: np.ndarray  # [HW, d]
    H: int
    W: int

    @property
    def T(self) -> int:
        return self.tokens.shape[-3]

    def with_pos(self) -> Tensor:
        return self.tokens + self.pos


@dataclass
class TextFeatures:
    features: Tensor  # [..., L, d]
    token_ids: np.ndarray  # [..., L]

    @property
    def L(self) -> int:
        return self.features.shape[-2]

    @property
    def mask(self) -> np.ndarray:
        return self.token_ids != Vocabulary.pad_id


def patchify(video: np.ndarray, patch: int) -> tuple[np.ndarray, int, int]:
    """``[..., T, C, Hp, Wp]`` pixels to ``[..., T, HW, C*P*P]`` patch vectors."""
    *lead, c, hp, wp = video.shape
    if hp % patch or wp % patch:
        raise ValueError(f"frame size {hp}x{wp} is not divisible by patch size P={patch}")
    h, w = hp // patch, wp // patch
    x = video.reshape(*lead, c, h, patch, w, patch)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, h * w, c * patch * patch), h, w


class PatchEmbedding(Module):
    """Linear projection of non-overlapping P x P patches."""

    def __init__(self, channels: int, patch: int, d: int, rng: np.random.Generator):
        self.patch = patch
        self.d = d
        self.proj = Linear(channels * patch * patch, d, rng)

    def __call__(self, video) -> FrameFeatures:
        video = np.asarray(video, dtype=np.float64)
        if video.ndim < 4:
            raise ValueError(f"video must be [..., T, C, H, W], got shape {video.shape}")
        patches, h, w = patchify(video, self.patch)
        tokens = self.proj(Tensor(patches))
        return FrameFeatures(tokens, sinusoid_2d(h, w, self.d), h, w)


def encode_frames(backbone: PatchEmbedding, video) -> FrameFeatures:
    return backbone(video)


class TextEncoder(Module):
    """Token embedding + learned positions + one encoder layer."""

    def __init__(self, vocab_size: int, max_len: int, d: int, heads: int, ffn_dim: int,
                 rng: np.random.Generator, dropout: float = 0.1):
        self.max_len = max_len
        self.embed = Embedding(vocab_size, d, rng, scale=d ** -0.5)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(max_len, d)), requires_grad=True)
        self.layer = EncoderLayer(d, heads, ffn_dim, rng, dropout)

    def __call__(self, token_ids) -> TextFeatures:
        ids = np.asarray(token_ids, dtype=np.intp)
        if ids.ndim == 1:
            ids = ids[None]
            squeeze = True
        else:
            squeeze = False
        L = ids.shape[-1]
        if not 1 <= L <= self.max_len:
            raise ValueError(f"token count {L} outside [1, {self.max_len}]")
        mask = ids != Vocabulary.pad_id
        x = self.embed(ids) + self.pos[:L]
        x = self.layer(x, key_mask=mask)
        if squeeze:
            x = x.reshape(x.shape[1:])
            ids = ids[0]
        return TextFeatures(x, ids)


def tokenize_and_encode_text(encoder: TextEncoder, vocab: Vocabulary, query: str) -> TextFeatures:
    return encoder(np.asarray(vocab.encode(query)))


def pad_token_ids(seqs: list[list[int]]) -> np.ndarray:
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), Vocabulary.pad_id, dtype=np.intp)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out

