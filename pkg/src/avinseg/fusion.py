"""Audio-to-query fusion: uniform additive baseline and cross-attention stack.

Both fusion routes share the same interface so they can be trained and
compared under identical conditions: a stack of learnable queries (frame
queries plus one count token) is conditioned on the per-frame audio tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor


class UnsupportedBaselineError(ValueError):
    """Additive fusion is defined for a single audio token per frame."""


@dataclass
class QuerySet:
    """Learnable frame queries plus the count token carried alongside."""

    queries: Tensor  # [N_f x D]
    count_token: Tensor  # [1 x D]

    @property
    def n_f(self) -> int:
        return self.queries.shape[0]

    def stream(self) -> Tensor:
        """Queries with the count token appended as the final row."""
        return ad.concat([self.queries, self.count_token], axis=0)


def init_weight(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class CrossAttentionLayer:
    """Single-head cross-attention + feed-forward block, post-norm residuals."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_ff1: Tensor
    w_ff2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def create(cls, d_model: int, d_ff: int, rng: np.random.Generator) -> "CrossAttentionLayer":
        return cls(
            w_q=init_weight(rng, d_model, (d_model, d_model)),
            w_k=init_weight(rng, d_model, (d_model, d_model)),
            w_v=init_weight(rng, d_model, (d_model, d_model)),
            w_o=init_weight(rng, d_model, (d_model, d_model)),
            w_ff1=init_weight(rng, d_model, (d_model, d_ff)),
            w_ff2=init_weight(rng, d_ff, (d_ff, d_model)),
            ln1_gain=Tensor(np.ones((1, d_model)), requires_grad=True),
            ln1_bias=Tensor(np.zeros((1, d_model)), requires_grad=True),
            ln2_gain=Tensor(np.ones((1, d_model)), requires_grad=True),
            ln2_bias=Tensor(np.zeros((1, d_model)), requires_grad=True),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.w_o": self.w_o,
            f"{prefix}.w_ff1": self.w_ff1,
            f"{prefix}.w_ff2": self.w_ff2,
            f"{prefix}.ln1_gain": self.ln1_gain,
            f"{prefix}.ln1_bias": self.ln1_bias,
            f"{prefix}.ln2_gain": self.ln2_gain,
            f"{prefix}.ln2_bias": self.ln2_bias,
        }


def attend(q_in: Tensor, kv: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor) -> Tensor:
    """Single-head scaled dot-product attention, queries over kv rows."""
    d = q_in.shape[1]
    q = ad.matmul(q_in, w_q)
    k = ad.matmul(kv, w_k)
    v = ad.matmul(kv, w_v)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=1)
    return ad.matmul(ad.matmul(weights, v), w_o)


def feed_forward(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    return ad.matmul(ad.relu(ad.matmul(x, w1)), w2)


def cross_attention(layer: CrossAttentionLayer, q_in: Tensor, kv: Tensor) -> Tensor:
    """LayerNorm(q + Attn(q, kv)) followed by LayerNorm(. + FFN(.))."""
    if q_in.shape[1] != kv.shape[1]:
        raise ad.ShapeError(
            f"cross_attention: query dim {q_in.shape} does not match kv dim {kv.shape}"
        )
    attended = ad.layernorm(
        ad.add(q_in, attend(q_in, kv, layer.w_q, layer.w_k, layer.w_v, layer.w_o)),
        layer.ln1_gain,
        layer.ln1_bias,
    )
    return ad.layernorm(
        ad.add(attended, feed_forward(attended, layer.w_ff1, layer.w_ff2)),
        layer.ln2_gain,
        layer.ln2_bias,
    )


def additive_fuse(queries: Tensor, audio: Tensor) -> Tensor:
    """Uniform additive baseline: every row receives the same audio vector."""
    if audio.shape[0] != 1:
        raise UnsupportedBaselineError(
            f"additive fusion expects a single audio token, got {audio.shape[0]}"
        )
    if queries.shape[1] != audio.shape[1]:
        raise ad.ShapeError(
            f"additive_fuse: query dim {queries.shape} does not match audio dim {audio.shape}"
        )
    return ad.add(queries, audio)


def acqg(layers: list[CrossAttentionLayer], query_stream: Tensor, audio: Tensor) -> Tensor:
    """Audio-centric query generation: stacked cross-attention over audio tokens.

    The count token travels inside the query stream (final row) so it picks up
    the same audio conditioning as the frame queries.
    """
    x = query_stream
    for layer in layers:
        x = cross_attention(layer, x, audio)
    return x
