"""Training loop: per-video objective assembly and Adam updates.

Each optimization step draws a batch of videos, builds the full objective
(frame-level matching loss, video-level matching loss, query-alignment loss
and the counting loss) on a fresh graph, backpropagates once and applies an
Adam update. Everything is seeded, shuffles included, so identical (seed,
config) pairs reproduce identical logs and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor
from avinseg.config import RunConfig
from avinseg.counting import categorical_count_loss, saoc_loss
from avinseg.matching import LossWeights, match_pairs, set_loss, sim_loss, total_loss
from avinseg.model import Model, VideoForward
from avinseg.synthdata import SyntheticVideo

LOG_HEADER = "step,L_frame,L_video,L_sim,L_SAOC,total"


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite; carries the component name."""

    def __init__(self, component: str, step: int):
        super().__init__(f"loss component '{component}' became non-finite at step {step}")
        self.component = component
        self.step = step


class _NonFiniteComponent(RuntimeError):
    def __init__(self, component: str):
        super().__init__(component)
        self.component = component


def _require_finite(component: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise _NonFiniteComponent(component)


@dataclass
class VideoGroundTruth:
    """Per-frame and trajectory-level targets derived from one video."""

    frame_masks: list[np.ndarray]  # T arrays [G_t x H*W]
    frame_labels: list[np.ndarray]  # T arrays [G_t]
    video_masks: np.ndarray  # [G x T*H*W]
    video_labels: np.ndarray  # [G]
    counts: list[int]


def prepare_targets(video: SyntheticVideo) -> VideoGroundTruth:
    t, h, w = video.frames.shape[:3]
    frame_masks, frame_labels = [], []
    for ti in range(t):
        masks, labels = [], []
        for traj in video.trajectories:
            m = traj.masks[ti]
            if m.any():
                masks.append((m >= 0.5).astype(np.float64).reshape(-1))
                labels.append(traj.label)
        frame_masks.append(np.array(masks).reshape(len(masks), h * w))
        frame_labels.append(np.array(labels, dtype=np.intp))
    video_masks = np.array(
        [(traj.masks >= 0.5).astype(np.float64).reshape(-1) for traj in video.trajectories]
    ).reshape(len(video.trajectories), t * h * w)
    video_labels = np.array([traj.label for traj in video.trajectories], dtype=np.intp)
    return VideoGroundTruth(frame_masks, frame_labels, video_masks, video_labels, list(video.counts))


def video_objective(model: Model, fwd: VideoForward, gt: VideoGroundTruth, cfg: RunConfig) -> dict[str, Tensor]:
    """All loss components for one video, as scalar tensors on a live graph."""
    mcfg, lcfg = cfg.model, cfg.loss
    weights = LossWeights(w_cls=lcfg.w_cls, w_bce=lcfg.w_bce, w_dice=lcfg.w_dice)

    frame_terms = []
    for fo, masks, labels in zip(fwd.frame_outputs, gt.frame_masks, gt.frame_labels):
        _require_finite("L_frame", fo.mask_logits, fo.class_logits)
        _require_finite("L_SAOC", fo.count_logits)
        frame_terms.append(
            set_loss(fo.mask_logits, fo.class_logits, masks, labels, weights, mcfg.k_classes)
        )
    l_frame = frame_terms[0]
    for term in frame_terms[1:]:
        l_frame = ad.add(l_frame, term)
    l_frame = ad.scale(l_frame, 1.0 / len(frame_terms))

    video_mask_logits = ad.concat(fwd.video_out.mask_logits, axis=1)  # [N_v x T*P]
    _require_finite("L_video", video_mask_logits, fwd.video_out.class_logits)
    video_pairs = match_pairs(
        video_mask_logits.data,
        fwd.video_out.class_logits.data,
        gt.video_masks,
        gt.video_labels,
        weights,
    )
    l_video = set_loss(
        video_mask_logits,
        fwd.video_out.class_logits,
        gt.video_masks,
        gt.video_labels,
        weights,
        mcfg.k_classes,
        pairs=video_pairs,
    )

    l_sim = sim_loss(
        [fo.frame_queries for fo in fwd.frame_outputs],
        [fo.mask_logits.data for fo in fwd.frame_outputs],
        fwd.video_out.queries,
        fwd.video_out.mask_logit_array(),
        video_pairs,
    )

    count_logits = [fo.count_logits for fo in fwd.frame_outputs]
    if mcfg.count_loss == "ce":
        l_count = categorical_count_loss(count_logits, gt.counts, mcfg.k_max)
    else:
        l_count = saoc_loss(
            count_logits, gt.counts, mcfg.k_max, conditional_mask=mcfg.saoc_conditional_mask
        )
    lam = lcfg.lambda_saoc if mcfg.count_loss != "none" else 0.0
    total = total_loss(l_frame, l_video, l_sim, l_count, lam, lcfg.sim_weight)
    return {"L_frame": l_frame, "L_video": l_video, "L_sim": l_sim, "L_SAOC": l_count, "total": total}


class Adam:
    """Adaptive gradient descent; parameters with no gradient receive zeros."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.names = sorted(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}

    def step(self) -> None:
        self.t += 1
        corr1 = 1.0 - self.b1**self.t
        corr2 = 1.0 - self.b2**self.t
        for n in self.names:
            p = self.params[n]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[n] / corr1
            v_hat = self.v[n] / corr2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    model: Model
    log_rows: list[str]
    final_step: int


def train_run(
    cfg: RunConfig,
    train_videos: list[SyntheticVideo],
    checkpoint_hook=None,
) -> TrainResult:
    """Run the configured number of Adam steps over the training split.

    ``checkpoint_hook(step, model)`` fires at the configured interval and at
    the final step.
    """
    if not train_videos:
        raise ValueError("train_run: empty training split")
    model = Model(cfg.model, rng=np.random.default_rng([cfg.train.seed, 0xD0E1]))
    params = model.parameters()
    opt = Adam(params, lr=cfg.train.lr)
    shuffle_rng = np.random.default_rng([cfg.train.seed, 0x5F0F])
    targets = [prepare_targets(v) for v in train_videos]

    log_rows = [LOG_HEADER]
    order: list[int] = []
    for step in range(1, cfg.train.steps + 1):
        batch_idx = []
        for _ in range(cfg.train.batch_size):
            if not order:
                order = list(shuffle_rng.permutation(len(train_videos)))
            batch_idx.append(order.pop(0))

        combined = None
        sums = {"L_frame": 0.0, "L_video": 0.0, "L_sim": 0.0, "L_SAOC": 0.0, "total": 0.0}
        for vi in batch_idx:
            fwd = model.forward_video(train_videos[vi].frames, train_videos[vi].audio)
            try:
                comps = video_objective(model, fwd, targets[vi], cfg)
            except _NonFiniteComponent as exc:
                raise TrainingDivergedError(exc.component, step) from exc
            for name in sums:
                value = comps[name].item()
                if not np.isfinite(value):
                    raise TrainingDivergedError(name, step)
                sums[name] += value
            combined = comps["total"] if combined is None else ad.add(combined, comps["total"])
        loss = ad.scale(combined, 1.0 / len(batch_idx))
        loss.backward()
        opt.step()

        row = [str(step)] + [repr(sums[k] / len(batch_idx)) for k in ("L_frame", "L_video", "L_sim", "L_SAOC", "total")]
        log_rows.append(",".join(row))
        if checkpoint_hook is not None:
            interval = cfg.train.checkpoint_interval
            if (interval > 0 and step % interval == 0) or step == cfg.train.steps:
                checkpoint_hook(step, model)
    if cfg.train.steps == 0 and checkpoint_hook is not None:
        checkpoint_hook(0, model)
    return TrainResult(model=model, log_rows=log_rows, final_step=cfg.train.steps)
