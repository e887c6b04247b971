"""Sound-aware ordinal counting.

The count head emits one logit per rank threshold. After a sigmoid, entry 0
is the marginal probability that the sounding-object count exceeds 0 and
entry k is the conditional probability of exceeding k given it exceeds k-1.
The chain of unconditional exceedance probabilities is therefore a product
of numbers in (0, 1), which makes it non-increasing in k by construction.

A plain categorical cross-entropy over counts 0..K_max is provided as the
ablation alternative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor


@dataclass
class OrdinalCountPrediction:
    """Sigmoid outputs of the count head, all strictly inside (0, 1)."""

    probs: Tensor  # [1 x K_max]

    @property
    def k_max(self) -> int:
        return self.probs.shape[-1]

    def chain(self) -> np.ndarray:
        """Unconditional exceedance probabilities P(count > k)."""
        return np.cumprod(self.probs.data.reshape(-1))


def ordinal_probs(logits: Tensor) -> OrdinalCountPrediction:
    return OrdinalCountPrediction(probs=ad.sigmoid(logits))


def ordinal_targets(n_obj: int, k_max: int) -> np.ndarray:
    """Binary rank targets t_k = 1 iff n_obj > k; saturates above k_max."""
    if n_obj < 0:
        raise ValueError(f"object count must be non-negative, got {n_obj}")
    return (n_obj > np.arange(k_max)).astype(np.float64)


def saoc_loss(
    count_logits: list[Tensor],
    counts: list[int],
    k_max: int,
    conditional_mask: bool = False,
) -> Tensor:
    """Mean over frames of the summed rank-wise binary cross-entropies.

    With ``conditional_mask`` the k-th term (k >= 1) is dropped on frames
    whose true count does not exceed k-1, training each conditional only on
    the frames where its condition holds.
    """
    if len(count_logits) != len(counts) or not count_logits:
        raise ValueError("count_logits and counts must align and be non-empty")
    per_frame = []
    for logits, n_obj in zip(count_logits, counts):
        pred = ordinal_probs(logits)
        t = ordinal_targets(n_obj, k_max).reshape(1, k_max)
        target = ad.constant(t)
        one_minus_target = ad.constant(1.0 - t)
        p = pred.probs
        term = ad.add(
            ad.mul(target, ad.log(p)),
            ad.mul(one_minus_target, ad.log(ad.add(ad.constant(np.ones_like(t)), ad.scale(p, -1.0)))),
        )
        if conditional_mask:
            weights = np.ones((1, k_max))
            weights[0, 1:] = t[0, : k_max - 1]
            term = ad.mul(term, ad.constant(weights))
        per_frame.append(ad.scale(ad.tsum(term), -1.0))
    stacked = per_frame[0]
    for extra in per_frame[1:]:
        stacked = ad.add(stacked, extra)
    return ad.scale(stacked, 1.0 / len(per_frame))


def decode_count(pred: OrdinalCountPrediction) -> int:
    """Number of exceedance probabilities whose chain product stays above 0.5.

    The strict inequality breaks ties toward fewer objects.
    """
    return int(np.sum(pred.chain() > 0.5))


def decode_count_from_probs(probs: np.ndarray) -> int:
    return int(np.sum(np.cumprod(np.asarray(probs, dtype=np.float64).reshape(-1)) > 0.5))


def categorical_count_loss(count_logits: list[Tensor], counts: list[int], k_max: int) -> Tensor:
    """Plain cross-entropy over counts 0..K_max (head emits K_max+1 logits)."""
    if len(count_logits) != len(counts) or not count_logits:
        raise ValueError("count_logits and counts must align and be non-empty")
    total = None
    for logits, n_obj in zip(count_logits, counts):
        if logits.shape[-1] != k_max + 1:
            raise ad.ShapeError(
                f"categorical count head must emit {k_max + 1} logits, got {logits.shape}"
            )
        onehot = np.zeros((1, k_max + 1))
        onehot[0, min(int(n_obj), k_max)] = 1.0
        log_probs = ad.log(ad.softmax(logits, axis=-1))
        nll = ad.scale(ad.tsum(ad.mul(ad.constant(onehot), log_probs)), -1.0)
        total = nll if total is None else ad.add(total, nll)
    return ad.scale(total, 1.0 / len(count_logits))


def decode_count_categorical(logits: np.ndarray) -> int:
    return int(np.argmax(np.asarray(logits).reshape(-1)))
