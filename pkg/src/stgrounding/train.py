"""Training loop, batched prediction and evaluation."""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as tt
from .backbones import Vocabulary
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data.dataset import Sample, augment_batch, collate, iterate_batches
from .inference import DecodedTube, decode_tube
from .losses import LossWeights, total_loss
from .metrics import MetricReport, evaluate_tubes
from .model import GroundingModel
from .optim import OptimizerState, init_ema, linear_warmup_decay, optimizer_step

LOSS_COLUMNS = ("step", "loss", "l1", "giou", "kl", "att")


def batch_loss(model: GroundingModel, batch, weights: LossWeights):
    out = model(batch.frames, batch.token_ids)
    loss, terms = total_loss(out.predictions, out.decoder.A, batch.tubes, weights)
    return loss, terms, out


@dataclass
class Trainer:
    model: GroundingModel
    cfg: RunConfig
    seed: int
    total_steps: int = 0
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        c = self.cfg
        self.weights = c.loss_weights()
        self.state = OptimizerState(
            lr={"backbone": c.lr_backbone, "text": c.lr_text, "rest": c.lr},
            weight_decay=c.weight_decay,
            ema_decay=c.ema_decay if c.ema else None,
        )
        self.params = dict(self.model.named_parameters())
        if c.ema:
            init_ema(self.params, self.state)
        self.rng = np.random.default_rng([self.seed, 2])
        self._text_schedule = linear_warmup_decay(c.text_warmup, max(self.total_steps, 1))

    def lr_scale(self, group: str, step: int) -> float:
        scale = 1.0
        if group == "text" and self.cfg.text_warmup > 0:
            scale = self._text_schedule(step)
        if self.cfg.lr_drop_step and step > self.cfg.lr_drop_step:
            scale *= self.cfg.lr_drop_factor
        return scale

    def step(self, samples: list[Sample], vocab: Vocabulary) -> dict[str, float]:
        if self.cfg.augment:
            samples = augment_batch(samples, self.rng)
        batch = collate(samples, vocab)
        self.model.train()
        self.model.zero_grad()
        with tt.Tape() as tape:
            loss, terms, _ = batch_loss(self.model, batch, self.weights)
        tt.backward(loss, tape)
        optimizer_step(self.params, self.state, self.model.param_group, self.lr_scale)
        return {"loss": loss.item(), **terms}


@contextmanager
def ema_weights(model: GroundingModel, state: OptimizerState | None):
    """Temporarily swap in EMA shadows for evaluation."""
    if state is None or state.ema_decay is None or not state.ema:
        yield
        return
    params = dict(model.named_parameters())
    saved = {n: p.data.copy() for n, p in params.items()}
    for n, p in params.items():
        p.data[...] = state.ema[n]
    try:
        yield
    finally:
        for n, p in params.items():
            p.data[...] = saved[n]


def predict(model: GroundingModel, samples: list[Sample], vocab: Vocabulary,
            batch_size: int = 8) -> list[tuple[DecodedTube, np.ndarray]]:
    """Decoded tube and all per-frame boxes for each sample, in eval mode."""
    model.eval()
    out = []
    for idx in iterate_batches(len(samples), batch_size, None):
        batch = collate([samples[i] for i in idx], vocab)
        final = model(batch.frames, batch.token_ids).final
        for b in range(len(idx)):
            pred = final.sample(b)
            out.append((decode_tube(pred), pred.boxes.data.copy()))
    return out


def evaluate(model: GroundingModel, samples: list[Sample], vocab: Vocabulary,
             batch_size: int = 8) -> MetricReport:
    preds = predict(model, samples, vocab, batch_size)
    return evaluate_tubes([p[0] for p in preds], [s.ann.tube() for s in samples],
                          [p[1] for p in preds])


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def train_run(cfg: RunConfig, seed: int, train: list[Sample], val: list[Sample],
              vocab: Vocabulary, out_dir=None,
              log: Callable[[str], None] | None = None) -> tuple[GroundingModel, Trainer, list[dict]]:
    """Train one model; writes checkpoints, metric JSON and a loss CSV when ``out_dir`` is set.

    Returns the model, its trainer and one metrics record per evaluated epoch.
    """
    model = GroundingModel(cfg.model_config(len(vocab), seed))
    per_epoch = steps_per_epoch(len(train), cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps:
        total = min(total, cfg.max_steps)
    trainer = Trainer(model, cfg, seed, total)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        vocab.save(out / "vocab.json")
        save_checkpoint(out / "checkpoint_init", model, trainer.state,
                        {"epoch": 0, "step": 0, "seed": seed, "model": model.cfg.to_json()})
        fh = open(out / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
    history = []
    step = 0
    t0 = time.time()
    try:
        for epoch in range(1, cfg.epochs + 1):
            if step >= total:
                break
            for idx in iterate_batches(len(train), cfg.batch_size, trainer.rng):
                if step >= total:
                    break
                terms = trainer.step([train[i] for i in idx], vocab)
                step += 1
                if writer is not None:
                    writer.writerow([step] + [repr(terms[c]) for c in LOSS_COLUMNS[1:]])
            if epoch % cfg.eval_every == 0 or step >= total or epoch == cfg.epochs:
                record = {"epoch": epoch, "step": step, "seconds": time.time() - t0}
                with ema_weights(model, trainer.state):
                    record["train"] = evaluate(model, train, vocab, cfg.batch_size).to_json()
                    if val:
                        record["val"] = evaluate(model, val, vocab, cfg.batch_size).to_json()
                history.append(record)
                if log is not None:
                    v = record.get("val", {})
                    log(f"epoch {epoch} step {step} train m_vIoU {record['train']['m_viou']:.3f} "
                        f"m_tIoU {record['train']['m_tiou']:.3f}"
                        + (f" val m_vIoU {v['m_viou']:.3f} m_tIoU {v['m_tiou']:.3f}" if v else ""))
                if out is not None:
                    (out / f"metrics_epoch{epoch:03d}.json").write_text(json.dumps(record, indent=1) + "\n")
                    save_checkpoint(out / "checkpoint_last", model, trainer.state,
                                    {"epoch": epoch, "step": step, "seed": seed,
                                     "model": model.cfg.to_json()})
    finally:
        if writer is not None:
            fh.close()
    return model, trainer, history
