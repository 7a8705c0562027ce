"""Command-line entry points.

Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .attention_maps import export_attention_maps
from .checkpoint import CheckpointError, load_checkpoint, read_manifest
from .complexity import complexity_report
from .config import ConfigValidationError, RunConfig, apply_overrides
from .data.dataset import collate, load_split, load_vocabulary
from .data.media import FormatError, ValidationError
from .data.synthetic import GenerationError, SceneParams, generate_synthetic_dataset
from .inference import DecodedTube
from .losses import GroundTruthTube
from .metrics import evaluate_tubes
from .model import GroundingModel, ModelConfig
from .train import predict, train_run

DATA_ERRORS = (FormatError, ValidationError, CheckpointError, ConfigValidationError,
               GenerationError, FileNotFoundError, KeyError)


class UsageError(Exception):
    def __init__(self, message: str, reported: bool = False):
        super().__init__(message)
        self.reported = reported


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message, reported=True)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON file")
    for f in fields(RunConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*names, dest=f"cfg_{f.name}", default=None, metavar="VALUE",
                       help=f"override RunConfig.{f.name}")


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return apply_overrides(cfg, overrides).validate()


def load_model(checkpoint) -> GroundingModel:
    extra = read_manifest(checkpoint).get("extra", {})
    if "model" not in extra:
        raise CheckpointError(f"{checkpoint}: manifest does not record the model configuration")
    model = GroundingModel(ModelConfig(**extra["model"]))
    load_checkpoint(checkpoint, model, with_optimizer=False)
    return model.eval()


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    params = SceneParams(T=args.T, height=args.height, width=args.width, T_max=args.T_max,
                         min_size=args.min_size, max_size=args.max_size)
    index = generate_synthetic_dataset(args.out, args.n, args.seed, params, args.T_raw)
    print(f"wrote {len(index.train)} train and {len(index.val)} val videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train = load_split(cfg.data_dir, "train")
    val = load_split(cfg.data_dir, "val")
    vocab = load_vocabulary(cfg.data_dir)
    if not train:
        raise ValidationError(f"{cfg.data_dir}: training split is empty")
    for seed in cfg.seeds:
        out = Path(cfg.out_dir) / f"seed_{seed}"
        train_run(cfg, seed, train, val, vocab, out, log=lambda s: print(s, flush=True))
        print(f"seed {seed}: outputs in {out}")
    return 0


def _prediction_records(model, samples, vocab) -> dict:
    preds = predict(model, samples, vocab)
    out = {}
    for s, (tube, boxes) in zip(samples, preds):
        rec = tube.to_json()
        rec["all_boxes"] = boxes.tolist()
        out[s.ann.video_id] = rec
    return out


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    samples = load_split(args.data, args.split)
    _emit(_prediction_records(model, samples, load_vocabulary(args.data)), args.out)
    return 0


def _tube_from_record(rec: dict, T: int) -> tuple[DecodedTube, np.ndarray]:
    tube = DecodedTube(int(rec["t_s"]), int(rec["t_e"]), np.asarray(rec["boxes"], dtype=np.float64).reshape(-1, 4))
    if len(tube.boxes) != tube.t_e - tube.t_s + 1:
        raise ValidationError(f"prediction has {len(tube.boxes)} boxes for [{tube.t_s}, {tube.t_e}]")
    if "all_boxes" in rec:
        boxes = np.asarray(rec["all_boxes"], dtype=np.float64).reshape(-1, 4)
    else:
        # frames outside the predicted span get an empty box
        boxes = np.zeros((T, 4))
        boxes[tube.t_s:tube.t_e + 1] = tube.boxes
    if len(boxes) != T:
        raise ValidationError(f"prediction has {len(boxes)} per-frame boxes for T={T}")
    return tube, boxes


def cmd_eval(args) -> int:
    samples = load_split(args.data, args.split)
    if args.predictions:
        try:
            records = json.loads(Path(args.predictions).read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{args.predictions}: invalid JSON at offset {e.pos}: {e.msg}") from None
    elif args.checkpoint:
        records = _prediction_records(load_model(args.checkpoint), samples, load_vocabulary(args.data))
    else:
        raise UsageError("eval needs --checkpoint or --predictions")
    decoded, all_boxes, gts = [], [], []
    for s in samples:
        if s.ann.video_id not in records:
            raise ValidationError(f"no prediction for {s.ann.video_id}")
        tube, boxes = _tube_from_record(records[s.ann.video_id], s.ann.T)
        decoded.append(tube)
        all_boxes.append(boxes)
        gts.append(GroundTruthTube(s.ann.t_s, s.ann.t_e, s.ann.boxes, s.ann.T))
    _emit(evaluate_tubes(decoded, gts, all_boxes).to_json(), args.out)
    return 0


def cmd_inspect(args) -> int:
    model = load_model(args.checkpoint)
    samples = load_split(args.data, "all")
    match = [s for s in samples if s.ann.video_id == args.video_id] if args.video_id else samples[:1]
    if not match:
        raise ValidationError(f"video {args.video_id!r} not found in {args.data}")
    vocab = load_vocabulary(args.data)
    batch = collate(match, vocab)
    out = model(batch.frames, batch.token_ids)
    feats = out.frames
    written = export_attention_maps(out.decoder, feats.H * feats.W, batch.token_ids.shape[1],
                                    feats.H, feats.W, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_complexity(args) -> int:
    reports = []
    for T in args.T:
        for k in args.k:
            r = complexity_report(T, args.HW, args.L, k, args.N, args.d, args.heads)
            reports.append(r.to_json())
    _emit(reports, args.out)
    return 0


def build_parser() -> Parser:
    p = Parser(prog="stgrounding", description="Spatio-temporal video grounding toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=40)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--T", type=int, default=16)
    g.add_argument("--T-raw", dest="T_raw", type=int, default=None,
                   help="render this many frames, then subsample to at most --T-max")
    g.add_argument("--T-max", dest="T_max", type=int, default=200)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--min-size", dest="min_size", type=int, default=8)
    g.add_argument("--max-size", dest="max_size", type=int, default=11)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model (one run per seed)")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("predict", cmd_predict, "write decoded tubes as JSON"),
                              ("eval", cmd_eval, "write a metric report as JSON")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--data", required=True)
        e.add_argument("--split", default="val", choices=("train", "val", "all"))
        e.add_argument("--checkpoint", required=(name == "predict"))
        if name == "eval":
            e.add_argument("--predictions", help="JSON written by the predict command")
        e.add_argument("--out")
        e.set_defaults(func=func)

    a = sub.add_parser("inspect-attention", help="export attention maps as CSV and PGM")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--video-id", dest="video_id")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_inspect)

    c = sub.add_parser("complexity", help="attention cost report for a sweep of T and k")
    c.add_argument("--T", type=int, nargs="+", default=[200])
    c.add_argument("--k", type=int, nargs="+", default=[4])
    c.add_argument("--HW", type=int, default=64)
    c.add_argument("--L", type=int, default=8)
    c.add_argument("--N", type=int, default=2)
    c.add_argument("--d", type=int, default=64)
    c.add_argument("--heads", type=int, default=4)
    c.add_argument("--out")
    c.set_defaults(func=cmd_complexity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        if not e.reported:
            print(f"error: {e}", file=sys.stderr)
        return 1
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
