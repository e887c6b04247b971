"""Video-level object tracker and confidence-threshold inference.

Learnable video queries consume the per-frame audiovisual queries window by
window: inside each window they cross-attend to the window's frame queries
(optionally with the window's audio tokens appended to the key/value set),
then self-attend and pass through a feed-forward block. The updated query
state seeds the next window, so identity is carried purely by query index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor
from avinseg.fusion import attend, feed_forward
from avinseg.localizer import DecoderLayer, LinearHead, MaskHead
from avinseg.matching import _np_sigmoid, _np_softmax


class EmptyVideoError(ValueError):
    """Tracking requires at least one frame."""


@dataclass
class VideoQuerySet:
    queries: Tensor  # [N_v x D]
    class_logits: Tensor  # [N_v x (K+1)]
    mask_logits: list[Tensor]  # T tensors of [N_v x H*W]

    def mask_logit_array(self) -> np.ndarray:
        """[N_v x T x H*W] view of the per-frame mask logits."""
        return np.stack([m.data for m in self.mask_logits], axis=1)


@dataclass
class InstanceTrajectory:
    """One predicted (or ground-truth) instance spanning all T frames."""

    id: int
    masks: np.ndarray  # [T x H x W] probabilities in [0, 1] (binary for GT)
    label: int  # 1..K
    confidence: float
    class_logits: np.ndarray | None = field(default=None, repr=False)


def track(
    block: DecoderLayer,
    video_queries: Tensor,
    frame_queries: list[Tensor],
    audio: list[Tensor],
    final_maps: list[Tensor],
    mask_head: MaskHead,
    class_head: LinearHead,
    window: int = 6,
    include_audio: bool = True,
) -> VideoQuerySet:
    """Aggregate frame queries into video queries and run the video heads."""
    t_total = len(frame_queries)
    if t_total == 0:
        raise EmptyVideoError("track: need at least one frame")
    if window < 1:
        raise ValueError(f"track: window must be positive, got {window}")
    state = video_queries
    for start in range(0, t_total, window):
        stop = min(start + window, t_total)
        kv_parts = list(frame_queries[start:stop])
        if include_audio:
            kv_parts.extend(audio[start:stop])
        kv = kv_parts[0] if len(kv_parts) == 1 else ad.concat(kv_parts, axis=0)
        state = ad.layernorm(
            ad.add(state, attend(state, kv, block.cross_w_q, block.cross_w_k, block.cross_w_v, block.cross_w_o)),
            block.ln_cross_gain,
            block.ln_cross_bias,
        )
        state = ad.layernorm(
            ad.add(state, attend(state, state, block.self_w_q, block.self_w_k, block.self_w_v, block.self_w_o)),
            block.ln_self_gain,
            block.ln_self_bias,
        )
        state = ad.layernorm(
            ad.add(state, feed_forward(state, block.w_ff1, block.w_ff2)),
            block.ln_ff_gain,
            block.ln_ff_bias,
        )
    embed = mask_head.embed(state)
    mask_logits = [ad.matmul(embed, ad.transpose(fm)) for fm in final_maps]
    return VideoQuerySet(queries=state, class_logits=class_head.apply(state), mask_logits=mask_logits)


def infer(
    video_out: VideoQuerySet,
    threshold: float,
    h: int,
    w: int,
) -> list[InstanceTrajectory]:
    """Confidence-filtered instance trajectories, ids ordered by confidence."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"infer: threshold must lie in (0, 1), got {threshold}")
    class_logits = video_out.class_logits.data
    probs = _np_softmax(class_logits, axis=1)
    real = probs[:, :-1]
    confidence = real.max(axis=1)
    labels = real.argmax(axis=1) + 1
    keep = np.flatnonzero(confidence > threshold)
    order = sorted(keep, key=lambda i: (-confidence[i], i))
    mask_probs = _np_sigmoid(video_out.mask_logit_array())
    out = []
    for new_id, qi in enumerate(order):
        out.append(
            InstanceTrajectory(
                id=new_id,
                masks=mask_probs[qi].reshape(-1, h, w),
                label=int(labels[qi]),
                confidence=float(confidence[qi]),
                class_logits=class_logits[qi].copy(),
            )
        )
    return out
