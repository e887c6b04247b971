"""Command-line entry point: gen-data, train, infer, eval, grad-check.

Every failure path exits non-zero after printing a single machine-parseable
line to stderr with an error-code prefix (E_CONFIG, E_SCHEMA, E_CHECKPOINT,
E_NAN, E_IO).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from avinseg import checks
from avinseg.config import (
    ConfigError,
    RunConfig,
    apply_override,
    check_model_matches_data,
    config_from_dict,
    load_config,
    save_config,
    validate,
)
from avinseg.formats import SchemaError, VideoRecord, load_records, save_records
from avinseg.metrics import EvalVideo, evaluate
from avinseg.model import CheckpointError, Model, load_checkpoint, save_checkpoint
from avinseg.synthdata import generate, load_corpus, write_corpus
from avinseg.tracker import infer as infer_trajectories
from avinseg.training import TrainingDivergedError, train_run


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = 2):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _common_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
    if getattr(args, "lambda_saoc", None) is not None:
        apply_override(cfg, "loss.lambda_saoc", args.lambda_saoc)
    if getattr(args, "no_acqg", False):
        apply_override(cfg, "model.use_acqg", False)
    if getattr(args, "count_loss", None) is not None:
        apply_override(cfg, "model.count_loss", args.count_loss)
    if getattr(args, "kmax", None) is not None:
        apply_override(cfg, "model.k_max", args.kmax)
    if getattr(args, "steps", None) is not None:
        apply_override(cfg, "train.steps", args.steps)
    if getattr(args, "threshold", None) is not None:
        apply_override(cfg, "infer.threshold", args.threshold)
    if getattr(args, "corpus", None) is not None:
        cfg.corpus_dir = args.corpus
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    validate(cfg)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _common_config(args)
    out_dir = Path(args.out if args.out else cfg.corpus_dir)
    corpus = generate(cfg.data, seed=cfg.data.seed)
    write_corpus(corpus, out_dir)
    n_train = len(corpus.split("train"))
    n_val = len(corpus.split("val"))
    print(f"wrote {n_train} train / {n_val} val videos to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _common_config(args)
    corpus = load_corpus(cfg.corpus_dir)
    _check_corpus_compat(cfg, corpus.meta)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")

    def hook(step: int, model: Model):
        name = "checkpoint_final.npz" if step == cfg.train.steps else f"checkpoint_{step:06d}.npz"
        save_checkpoint(out_dir / name, model, cfg, step)

    result = train_run(cfg, corpus.split("train"), checkpoint_hook=hook)
    (out_dir / "train_log.csv").write_text("\n".join(result.log_rows) + "\n")
    print(f"trained {result.final_step} steps; artifacts in {out_dir}")
    return 0


def _check_corpus_compat(cfg: RunConfig, meta: dict) -> None:
    data_cfg = meta.get("config", {})
    pairs = (
        ("h", cfg.model.h),
        ("w", cfg.model.w),
        ("channels", cfg.model.channels),
        ("k_classes", cfg.model.k_classes),
        ("m_audio", cfg.model.m_audio),
        ("d_model", cfg.model.d_model),
    )
    bad = [name for name, v in pairs if name in data_cfg and data_cfg[name] != v]
    if bad:
        raise ConfigError(f"model does not match corpus on: {', '.join(bad)}")


def cmd_infer(args) -> int:
    model, cfg, _step, _rng = load_checkpoint(args.checkpoint)
    threshold = args.threshold if args.threshold is not None else cfg.infer.threshold
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"infer.threshold must lie in (0, 1), got {threshold}")
    corpus_dir = args.corpus if args.corpus else cfg.corpus_dir
    corpus = load_corpus(corpus_dir)
    videos = [v for v in corpus.videos if v.split == args.split]
    if not videos:
        raise ConfigError(f"no videos in split '{args.split}' of {corpus_dir}")
    records = []
    for video in sorted(videos, key=lambda v: v.video_id):
        fwd = model.forward_video(video.frames, video.audio)
        trajs = infer_trajectories(fwd.video_out, threshold, cfg.model.h, cfg.model.w)
        counts = model.decode_counts(fwd.frame_outputs)
        records.append(
            VideoRecord(
                video_id=video.video_id,
                t=video.frames.shape[0],
                h=cfg.model.h,
                w=cfg.model.w,
                trajectories=trajs,
                counts=counts,
                split=video.split,
            )
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_records(out, records)
    print(f"wrote predictions for {len(records)} videos to {out}")
    return 0


def cmd_eval(args) -> int:
    preds = load_records(args.pred)
    gt_path = Path(args.gt)
    if gt_path.is_dir():
        gt_path = gt_path / "gt.json"
    gts = {r.video_id: r for r in load_records(gt_path)}
    eval_videos = []
    for rec in preds:
        if rec.video_id not in gts:
            raise SchemaError(f"prediction video '{rec.video_id}' not present in ground truth")
        gt = gts[rec.video_id]
        if (gt.t, gt.h, gt.w) != (rec.t, rec.h, rec.w):
            raise SchemaError(
                f"video '{rec.video_id}': prediction dims {(rec.t, rec.h, rec.w)} "
                f"!= ground truth {(gt.t, gt.h, gt.w)}"
            )
        eval_videos.append(
            EvalVideo(
                video_id=rec.video_id,
                t=gt.t,
                h=gt.h,
                w=gt.w,
                gt=gt.trajectories,
                pred=rec.trajectories,
                counts=gt.counts if gt.counts is not None else [0] * gt.t,
                pred_counts=rec.counts,
            )
        )
    report = evaluate(eval_videos)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    header, row = report.csv_rows()
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(payload + "\n")
        (out_dir / "report.csv").write_text(header + "\n" + row + "\n")
        print(f"wrote report to {out_dir}")
    print(payload)
    return 0


def cmd_grad_check(args) -> int:
    results = checks.run_suite(seeds=args.seeds)
    for res in results:
        print(res.line())
    if args.out:
        payload = [
            {
                "name": r.name,
                "tol": r.tol,
                "max_rel_err": r.max_rel_err,
                "passed": r.passed,
                "seeds": r.seeds,
            }
            for r in results
        ]
        Path(args.out).write_text(json.dumps(payload, indent=1) + "\n")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avinseg",
        description="Audiovisual instance segmentation at desk scale: data, training, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides train/data seed")
        p.add_argument("--out", help="output directory or file")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    add_common(p)

    p = sub.add_parser("train", help="train a model on a generated corpus")
    add_common(p)
    p.add_argument("--corpus", help="corpus directory (overrides config)")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--lambda-saoc", dest="lambda_saoc", type=float, help="counting-loss weight")
    p.add_argument("--no-acqg", dest="no_acqg", action="store_true", help="use the additive fusion baseline")
    p.add_argument("--count-loss", dest="count_loss", choices=["saoc", "ce", "none"], help="counting loss variant")
    p.add_argument("--kmax", type=int, help="number of ordinal count thresholds")

    p = sub.add_parser("infer", help="run inference from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="corpus directory (defaults to checkpoint config)")
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--threshold", type=float, help="confidence threshold in (0, 1)")
    p.add_argument("--seed", type=int, help="accepted for interface symmetry; inference is deterministic")
    p.add_argument("--out", required=True, help="prediction file to write")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction JSON file")
    p.add_argument("--gt", required=True, help="ground-truth file or corpus directory")
    p.add_argument("--out", help="directory for report.json / report.csv")

    p = sub.add_parser("grad-check", help="run the registered gradient-check suite")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", help="JSON report path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "infer": cmd_infer,
        "eval": cmd_eval,
        "grad-check": cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"E_CONFIG: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"E_SCHEMA: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"E_CHECKPOINT: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"E_NAN: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
