"""Train a small model for a few hundred steps and score it on held-out videos.

Uses a reduced corpus so the whole script runs in about a minute. The final
report carries mAP (trajectory-level, ST-IoU), HOTA (detection x association)
and FSLA with its silent/single/multi decomposition, plus the mean absolute
error of the decoded per-frame sounding counts.
"""

import numpy as np

from avinseg.config import RunConfig
from avinseg.metrics import EvalVideo, evaluate
from avinseg.synthdata import generate
from avinseg.tracker import infer
from avinseg.training import train_run

cfg = RunConfig()
cfg.data.n_train, cfg.data.n_val = 12, 6
cfg.train.steps = 300
cfg.train.lr = 2e-3
cfg.train.seed = 1

corpus = generate(cfg.data, seed=7)
print(f"training on {len(corpus.split('train'))} videos for {cfg.train.steps} steps...")
result = train_run(cfg, corpus.split("train"))
first, last = result.log_rows[1], result.log_rows[-1]
print(f"  total loss: {float(first.split(',')[-1]):.2f} -> {float(last.split(',')[-1]):.2f}")

print("\nrunning inference on the validation split...")
eval_videos = []
for video in sorted(corpus.split("val"), key=lambda v: v.video_id):
    fwd = result.model.forward_video(video.frames, video.audio)
    trajectories = infer(fwd.video_out, threshold=0.5, h=cfg.model.h, w=cfg.model.w)
    counts = result.model.decode_counts(fwd.frame_outputs)
    eval_videos.append(
        EvalVideo(
            video_id=video.video_id,
            t=video.frames.shape[0],
            h=cfg.model.h,
            w=cfg.model.w,
            gt=video.trajectories,
            pred=trajectories,
            counts=video.counts,
            pred_counts=counts,
        )
    )

report = evaluate(eval_videos)
print(f"\n  mAP   {report.mAP:6.2f}")
print(f"  HOTA  {report.HOTA:6.2f}  (DetA {report.DetA:.2f}, AssA {report.AssA:.2f})")
print(f"  FSLA  {report.FSLA:6.2f}  (silent {report.FSLAn:.2f}, single {report.FSLAs:.2f}, multi {report.FSLAm:.2f})")
print(f"  count MAE {report.count_mae:.3f} (multi-source frames: {report.count_mae_multi})")
print("\nFor the full-scale runs use the CLI: gen-data, train, infer, eval.")
