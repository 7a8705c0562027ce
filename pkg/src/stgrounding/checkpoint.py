"""Checkpoints: a JSON manifest plus one little-endian float64 blob.

Each array is stored under a prefixed key (``model/``, ``exp_avg/``,
``exp_avg_sq/``, ``ema/``) with its shape, byte offset and byte length.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Module
from .optim import OptimizerState

MANIFEST = "manifest.json"
BLOB = "tensors.bin"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(model: Module, state: OptimizerState | None) -> dict[str, np.ndarray]:
    out = {f"model/{n}": p.data for n, p in model.named_parameters()}
    if state is not None:
        for prefix, store in (("exp_avg", state.exp_avg), ("exp_avg_sq", state.exp_avg_sq),
                              ("ema", state.ema)):
            for n, a in store.items():
                out[f"{prefix}/{n}"] = a
    return out


def save_checkpoint(path, model: Module, state: OptimizerState | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``path/manifest.json`` and ``path/tensors.bin``; returns the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = {}
    chunks = []
    offset = 0
    for name, arr in _arrays(model, state).items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    manifest = {"version": FORMAT_VERSION, "tensors": entries, "extra": extra or {}}
    if state is not None:
        manifest["optimizer"] = {
            "step": state.step, "lr": state.lr, "weight_decay": state.weight_decay,
            "betas": list(state.betas), "eps": state.eps, "ema_decay": state.ema_decay,
        }
    (root / BLOB).write_bytes(b"".join(chunks))
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def read_manifest(path) -> dict:
    p = Path(path) / MANIFEST
    if not p.exists():
        raise CheckpointError(f"{p}: checkpoint manifest not found")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{p}: invalid JSON at offset {e.pos}: {e.msg}") from None


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest = read_manifest(path)
    blob = (Path(path) / BLOB).read_bytes()
    out = {}
    for name, e in manifest["tensors"].items():
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise CheckpointError(
                f"{name}: needs bytes [{e['offset']}, {end}) but blob has {len(blob)} bytes"
            )
        arr = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        out[name] = arr.reshape(e["shape"]).astype(np.float64)
    return manifest, out


def load_checkpoint(path, model: Module, with_optimizer: bool = True) -> tuple[OptimizerState | None, dict]:
    """Copy stored parameters into ``model``; rebuild optimizer state if present."""
    manifest, arrays = read_tensors(path)
    params = dict(model.named_parameters())
    stored = {k[len("model/"):] for k in arrays if k.startswith("model/")}
    missing = sorted(set(params) - stored)
    unexpected = sorted(stored - set(params))
    if missing or unexpected:
        raise CheckpointError(f"parameter mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, p in params.items():
        arr = arrays[f"model/{name}"]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"parameter '{name}': checkpoint shape {arr.shape} vs model shape {p.data.shape}"
            )
    for name, p in params.items():
        p.data[...] = arrays[f"model/{name}"]
    state = None
    opt = manifest.get("optimizer")
    if with_optimizer and opt is not None:
        state = OptimizerState(lr=dict(opt["lr"]), weight_decay=opt["weight_decay"],
                               betas=tuple(opt["betas"]), eps=opt["eps"], step=opt["step"],
                               ema_decay=opt["ema_decay"])
        for prefix, store in (("exp_avg", state.exp_avg), ("exp_avg_sq", state.exp_avg_sq),
                              ("ema", state.ema)):
            for key, arr in arrays.items():
                if key.startswith(prefix + "/"):
                    store[key[len(prefix) + 1:]] = arr.copy()
    return state, manifest.get("extra", {})


def apply_ema(model: Module, state: OptimizerState) -> None:
    """Overwrite model parameters with their EMA shadows."""
    for name, p in model.named_parameters():
        if name not in state.ema:
            raise CheckpointError(f"no EMA shadow for parameter '{name}'")
        p.data[...] = state.ema[name]
