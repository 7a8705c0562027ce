"""Flat run configuration, loadable from JSON and overridable field by field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import AGGREGATION_VARIANTS
from .losses import LossWeights
from .model import ModelConfig


class ConfigValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
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
    max_text_len: int = 16
    temporal_head_dropout: float = 0.5
    cross_attention: str = "blocked"
    # loss weights
    l1: float = 5.0
    giou: float = 2.0
    kl: float = 10.0
    att: float = 1.0
    # data
    T_max: int = 200
    fps: float = 5.0
    augment: bool = False
    # optimisation
    epochs: int = 10
    max_steps: int = 0  # 0 means no cap beyond epochs
    batch_size: int = 8
    lr: float = 1e-3
    lr_backbone: float = 1e-3
    lr_text: float = 1e-3
    text_warmup: int = 0
    lr_drop_step: int = 0  # multiply every rate by lr_drop_factor from this step on; 0 = never
    lr_drop_factor: float = 0.1
    weight_decay: float = 1e-4
    ema: bool = False
    ema_decay: float = 0.9998
    seeds: list[int] = field(default_factory=lambda: [0])
    # io
    data_dir: str = "data"
    out_dir: str = "runs/default"
    eval_every: int = 1

    def validate(self) -> "RunConfig":
        errors = []
        if self.T_max < 2:
            errors.append(f"T_max must be >= 2, got {self.T_max}")
        if self.k < 1:
            errors.append(f"k must be >= 1, got {self.k}")
        if self.d % self.heads:
            errors.append(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 4:
            errors.append(f"d={self.d} must be divisible by 4 for the 2D position code")
        if self.aggregation_variant not in AGGREGATION_VARIANTS:
            errors.append(f"aggregation_variant must be one of {AGGREGATION_VARIANTS}")
        if self.cross_attention not in ("blocked", "dense"):
            errors.append("cross_attention must be 'blocked' or 'dense'")
        if self.lr_drop_step < 0 or not 0.0 < self.lr_drop_factor <= 1.0:
            errors.append("lr_drop_step must be nonnegative and lr_drop_factor in (0, 1]")
        if self.epochs < 0 or self.max_steps < 0:
            errors.append("epochs and max_steps must be nonnegative")
        if not self.seeds:
            errors.append("seeds must list at least one seed")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if not 0.0 < self.ema_decay < 1.0:
            errors.append("ema_decay must lie in (0, 1)")
        for name in ("dropout", "temporal_head_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                errors.append(f"{name} must lie in [0, 1)")
        for name in ("l1", "giou", "kl", "att", "lr", "lr_backbone", "lr_text", "weight_decay"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if errors:
            raise ConfigValidationError("; ".join(errors))
        return self

    def model_config(self, vocab_size: int, seed: int | None = None) -> ModelConfig:
        return ModelConfig(
            d=self.d, heads=self.heads, ffn_dim=self.ffn_dim, dropout=self.dropout,
            enc_layers=self.enc_layers, dec_layers=self.dec_layers, k=self.k,
            fast_enabled=self.fast_enabled, aggregation_variant=self.aggregation_variant,
            use_time_encoding=self.use_time_encoding,
            use_temporal_self_attention=self.use_temporal_self_attention,
            patch=self.patch, vocab_size=vocab_size, max_text_len=self.max_text_len,
            temporal_head_dropout=self.temporal_head_dropout,
            cross_attention=self.cross_attention, seed=self.seeds[0] if seed is None else seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.l1, self.giou, self.kl, self.att)

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigValidationError(f"unknown config fields: {unknown}")
        return cls(**obj).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigValidationError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from None
        return cls.from_json(obj)


def parse_value(kind, text: str):
    """Convert a command-line string to the type of a config field."""
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigValidationError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in ("list[int]",):
        return [int(v) for v in text.split(",") if v.strip()]
    return text


def field_types() -> dict[str, str]:
    out = {}
    for f in fields(RunConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        out[f.name] = t
    return out


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    types = field_types()
    values = cfg.to_json()
    for name, text in overrides.items():
        if name not in types:
            raise ConfigValidationError(f"unknown config field {name!r}")
        try:
            values[name] = parse_value(types[name], text)
        except ValueError as e:
            raise ConfigValidationError(f"bad value for {name}: {e}") from None
    return RunConfig.from_json(values)
