"""AdamW with decoupled weight decay, per-group learning rates and EMA."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: dict[str, float]
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    ema_decay: float | None = None
    ema: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.ema_decay is not None and not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"EMA decay must lie in (0, 1), got {self.ema_decay}")


def optimizer_step(
    params: Mapping[str, Tensor],
    state: OptimizerState,
    group_of: Callable[[str], str] = lambda name: "default",
    lr_scale: Callable[[str, int], float] | None = None,
) -> None:
    """One AdamW update of every tensor in ``params``, in place.

    ``group_of`` maps a parameter name to a key of ``state.lr``;
    ``lr_scale(group, step)`` optionally rescales that group's rate.
    """
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter '{name}' has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        group = group_of(name)
        lr = state.lr[group]
        if lr_scale is not None:
            lr *= lr_scale(group, t)
        g = p.grad
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
        v = state.exp_avg_sq[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    if state.ema_decay is not None:
        update_ema(params, state)


def update_ema(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    decay = state.ema_decay
    for name, p in params.items():
        shadow = state.ema.get(name)
        if shadow is None:
            # the shadow starts from the value before the first update
            raise KeyError(f"EMA shadow missing for '{name}'; call init_ema first")
        shadow *= decay
        shadow += (1.0 - decay) * p.data


def init_ema(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    state.ema = {name: p.data.copy() for name, p in params.items()}


def linear_warmup_decay(warmup: int, total: int) -> Callable[[int], float]:
    """Linear ramp over ``warmup`` steps, then linear decay to zero at ``total``."""

    def scale(step: int) -> float:
        if warmup > 0 and step <= warmup:
            return step / warmup
        if total <= warmup:
            return 1.0
        return max(0.0, (total - step) / (total - warmup))

    return scale
