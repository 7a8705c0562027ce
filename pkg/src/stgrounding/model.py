"""The full grounding model: backbones, encoder, decoder and heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .backbones import FrameFeatures, PatchEmbedding, TextEncoder
from .decoder import DecoderAblation, DecoderConfig, DecoderOutput, SpaceTimeDecoder
from .encoder import EncoderConfig, EncoderOutput, VideoTextEncoder
from .heads import PredictionHeads, TubePrediction
from .nn import Module


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    enc_layers: int = 2
    dec_layers: int = 2
    k: int = 4
    fast_enabled: bool = True
    aggregation_variant: str = "sum_linear"
    use_time_encoding: bool = True
    use_temporal_self_attention: bool = True
    patch: int = 4
    channels: int = 3
    vocab_size: int = 32
    max_text_len: int = 16
    temporal_head_dropout: float = 0.5
    cross_attention: str = "blocked"
    seed: int = 0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            k=self.k, num_layers=self.enc_layers, d=self.d, heads=self.heads,
            ffn_dim=self.ffn_dim, dropout=self.dropout,
            aggregation_variant=self.aggregation_variant, fast_enabled=self.fast_enabled,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            num_layers=self.dec_layers, d=self.d, heads=self.heads, ffn_dim=self.ffn_dim,
            dropout=self.dropout, cross_attention=self.cross_attention,
        )

    def ablation(self) -> DecoderAblation:
        return DecoderAblation(self.use_time_encoding, self.use_temporal_self_attention)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ModelOutput:
    predictions: list[TubePrediction]  # one per decoder layer
    decoder: DecoderOutput
    encoder: EncoderOutput
    frames: FrameFeatures

    @property
    def final(self) -> TubePrediction:
        return self.predictions[-1]


class GroundingModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.backbone = PatchEmbedding(cfg.channels, cfg.patch, cfg.d, rng)
        self.text_encoder = TextEncoder(cfg.vocab_size, cfg.max_text_len, cfg.d, cfg.heads,
                                        cfg.ffn_dim, rng, cfg.dropout)
        self.encoder = VideoTextEncoder(cfg.encoder_config(), rng)
        self.decoder = SpaceTimeDecoder(cfg.decoder_config(), cfg.ablation(), rng)
        self.heads = PredictionHeads(cfg.d, rng, cfg.temporal_head_dropout)
        self.set_rng(np.random.default_rng([cfg.seed, 1]))

    def __call__(self, frames, token_ids) -> ModelOutput:
        """``frames``: [B, T, C, H, W] pixels; ``token_ids``: [B, L] (0 = padding)."""
        frames = np.asarray(frames, dtype=np.float64)
        token_ids = np.asarray(token_ids)
        if frames.ndim == 4:
            frames, token_ids = frames[None], token_ids[None]
        feats = self.backbone(frames)
        text = self.text_encoder(token_ids)
        enc = self.encoder(feats, text)
        dec = self.decoder(enc, text.mask)
        preds = [self.heads(q) for q in dec.Q]
        return ModelOutput(preds, dec, enc, feats)

    def param_group(self, name: str) -> str:
        if name.startswith("backbone."):
            return "backbone"
        if name.startswith("text_encoder."):
            return "text"
        return "rest"

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}
