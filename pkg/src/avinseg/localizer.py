"""Frame-level object localizer.

Embeds raw frames into multi-scale visual features, runs the segmentation
decoder over audio-conditioned queries plus the count token, and emits
per-frame mask logits, class logits and the decoded count-token embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor
from avinseg.fusion import attend, feed_forward, init_weight


@dataclass
class FrameFeatures:
    """Visual features at two resolutions; final_map feeds the mask head."""

    scales: list[Tensor]  # [H_s*W_s x D], coarser scales pooled from finer
    final_map: Tensor  # [H*W x D]
    h: int
    w: int


@dataclass
class LocalizerOutput:
    frame_queries: Tensor  # [N_f x D]
    count_token: Tensor  # [1 x D]
    mask_logits: Tensor  # [N_f x H*W]
    class_logits: Tensor  # [N_f x (K+1)]
    count_logits: Tensor  # [1 x K_max] (or K_max+1 in categorical mode)
    h: int = 0
    w: int = 0


@dataclass
class FrameEmbedder:
    """Linear per-pixel embedding plus a learned 2-d positional embedding."""

    w_pix: Tensor  # [C x D]
    b_pix: Tensor  # [1 x D]
    row_embed: Tensor  # [H x D]
    col_embed: Tensor  # [W x D]
    h: int
    w: int

    @classmethod
    def create(cls, h: int, w: int, channels: int, d_model: int, rng: np.random.Generator):
        return cls(
            w_pix=init_weight(rng, channels, (channels, d_model)),
            b_pix=Tensor(np.zeros((1, d_model)), requires_grad=True),
            row_embed=init_weight(rng, d_model, (h, d_model)),
            col_embed=init_weight(rng, d_model, (w, d_model)),
            h=h,
            w=w,
        )

    def params(self, prefix: str = "embed") -> dict[str, Tensor]:
        return {
            f"{prefix}.w_pix": self.w_pix,
            f"{prefix}.b_pix": self.b_pix,
            f"{prefix}.row": self.row_embed,
            f"{prefix}.col": self.col_embed,
        }


def embed_frame(embedder: FrameEmbedder, frame: np.ndarray) -> FrameFeatures:
    """frame [H x W x C] -> two feature scales; scale 2 is 2x2 mean pooling."""
    h, w = embedder.h, embedder.w
    if frame.shape[:2] != (h, w):
        raise ad.ShapeError(f"embed_frame: frame {frame.shape} does not match configured {h}x{w}")
    flat = ad.constant(frame.reshape(h * w, -1))
    pos = ad.grid_position(embedder.row_embed, embedder.col_embed)
    fine = ad.add(ad.add(ad.matmul(flat, embedder.w_pix), embedder.b_pix), pos)
    coarse = ad.grid_pool2(fine, h, w)
    return FrameFeatures(scales=[fine, coarse], final_map=fine, h=h, w=w)


@dataclass
class DecoderLayer:
    """Cross-attention to one visual scale, then query self-attention, then FFN."""

    cross_w_q: Tensor
    cross_w_k: Tensor
    cross_w_v: Tensor
    cross_w_o: Tensor
    ln_cross_gain: Tensor
    ln_cross_bias: Tensor
    self_w_q: Tensor
    self_w_k: Tensor
    self_w_v: Tensor
    self_w_o: Tensor
    ln_self_gain: Tensor
    ln_self_bias: Tensor
    w_ff1: Tensor
    w_ff2: Tensor
    ln_ff_gain: Tensor
    ln_ff_bias: Tensor

    @classmethod
    def create(cls, d_model: int, d_ff: int, rng: np.random.Generator) -> "DecoderLayer":
        def ln_pair():
            return (
                Tensor(np.ones((1, d_model)), requires_grad=True),
                Tensor(np.zeros((1, d_model)), requires_grad=True),
            )

        ln_cross = ln_pair()
        ln_self = ln_pair()
        ln_ff = ln_pair()
        return cls(
            cross_w_q=init_weight(rng, d_model, (d_model, d_model)),
            cross_w_k=init_weight(rng, d_model, (d_model, d_model)),
            cross_w_v=init_weight(rng, d_model, (d_model, d_model)),
            cross_w_o=init_weight(rng, d_model, (d_model, d_model)),
            ln_cross_gain=ln_cross[0],
            ln_cross_bias=ln_cross[1],
            self_w_q=init_weight(rng, d_model, (d_model, d_model)),
            self_w_k=init_weight(rng, d_model, (d_model, d_model)),
            self_w_v=init_weight(rng, d_model, (d_model, d_model)),
            self_w_o=init_weight(rng, d_model, (d_model, d_model)),
            ln_self_gain=ln_self[0],
            ln_self_bias=ln_self[1],
            w_ff1=init_weight(rng, d_model, (d_model, d_ff)),
            w_ff2=init_weight(rng, d_ff, (d_ff, d_model)),
            ln_ff_gain=ln_ff[0],
            ln_ff_bias=ln_ff[1],
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        names = [f.name for f in self.__dataclass_fields__.values()]  # type: ignore[attr-defined]
        return {f"{prefix}.{n}": getattr(self, n) for n in names}

    def apply(self, x: Tensor, scale_feats: Tensor) -> Tensor:
        x = ad.layernorm(
            ad.add(x, attend(x, scale_feats, self.cross_w_q, self.cross_w_k, self.cross_w_v, self.cross_w_o)),
            self.ln_cross_gain,
            self.ln_cross_bias,
        )
        x = ad.layernorm(
            ad.add(x, attend(x, x, self.self_w_q, self.self_w_k, self.self_w_v, self.self_w_o)),
            self.ln_self_gain,
            self.ln_self_bias,
        )
        return ad.layernorm(
            ad.add(x, feed_forward(x, self.w_ff1, self.w_ff2)), self.ln_ff_gain, self.ln_ff_bias
        )


def decode(layers: list[DecoderLayer], query_stream: Tensor, feats: FrameFeatures) -> tuple[Tensor, Tensor]:
    """Run the decoder; the count token must be the final row of the stream.

    Layers attend round-robin over the feature scales, finest first.
    Returns the decoded frame queries and the decoded count token.
    """
    x = query_stream
    for i, layer in enumerate(layers):
        x = layer.apply(x, feats.scales[i % len(feats.scales)])
    n = x.shape[0] - 1
    return x.slice(0, n), x.slice(n, n + 1)


@dataclass
class MaskHead:
    """Two-layer MLP on queries, dotted against the final-resolution map."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, d_model: int, rng: np.random.Generator) -> "MaskHead":
        return cls(
            w1=init_weight(rng, d_model, (d_model, d_model)),
            b1=Tensor(np.zeros((1, d_model)), requires_grad=True),
            w2=init_weight(rng, d_model, (d_model, d_model)),
            b2=Tensor(np.zeros((1, d_model)), requires_grad=True),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }

    def embed(self, queries: Tensor) -> Tensor:
        hidden = ad.relu(ad.add(ad.matmul(queries, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)


def mask_head(head: MaskHead, queries: Tensor, final_map: Tensor) -> Tensor:
    """Logit (i, p) is the dot product of the i-th query embedding and pixel p."""
    return ad.matmul(head.embed(queries), ad.transpose(final_map))


@dataclass
class LinearHead:
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "LinearHead":
        return cls(
            w=init_weight(rng, d_in, (d_in, d_out)),
            b=Tensor(np.zeros((1, d_out)), requires_grad=True),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def apply(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)
