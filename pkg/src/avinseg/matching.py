"""Bipartite matching and the set-prediction training objective.

The Hungarian solver is an O(n^3) augmenting-path implementation with
row/column potentials, plus a refinement pass that makes tie-breaking
deterministic: among minimum-cost assignments it returns the one whose
(row, column) pair list is lexicographically smallest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import SIGMOID_CLAMP, Tensor

_COST_TOL = 1e-9


@dataclass
class LossWeights:
    w_cls: float = 2.0
    w_bce: float = 5.0
    w_dice: float = 5.0


def _augmenting_path(cost: np.ndarray):
    """Min-cost assignment for an n x m matrix with n <= m.

    Returns (total, pairs, u, v) where u/v are the final dual potentials.
    """
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m + 1)
    col_row = np.full(m + 1, -1, dtype=np.intp)  # col m is the virtual start column
    for i in range(n):
        col_row[m] = i
        j0 = m
        minv = np.full(m, np.inf)
        way = np.full(m, m, dtype=np.intp)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            idx_free = np.flatnonzero(~used[:m])
            reduced = cost[i0, idx_free] - u[i0] - v[idx_free]
            better = reduced < minv[idx_free]
            upd = idx_free[better]
            minv[upd] = reduced[better]
            way[upd] = j0
            pos = int(np.argmin(minv[idx_free]))
            delta = float(minv[idx_free[pos]])
            j1 = int(idx_free[pos])
            used_cols = np.flatnonzero(used)
            u[col_row[used_cols]] += delta
            v[used_cols] -= delta
            minv[idx_free] -= delta
            j0 = j1
            if col_row[j0] == -1:
                break
        while j0 != m:
            j_prev = int(way[j0])
            col_row[j0] = col_row[j_prev]
            j0 = j_prev
    pairs = sorted((int(col_row[j]), j) for j in range(m) if col_row[j] != -1)
    total = float(sum(cost[r, c] for r, c in pairs))
    return total, pairs, u, v[:m]


def _solve(cost: np.ndarray):
    """Orientation-independent solve; returns (total, pairs, u_rows, v_cols)."""
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0, [], np.zeros(cost.shape[0]), np.zeros(cost.shape[1])
    if cost.shape[0] <= cost.shape[1]:
        return _augmenting_path(cost)
    total, pairs, u, v = _augmenting_path(cost.T)
    return total, sorted((c, r) for r, c in pairs), v, u


def _min_cost(cost: np.ndarray) -> float:
    return _solve(cost)[0]


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment covering min(rows, cols) pairs.

    Ties between equally cheap assignments are broken toward the lowest row
    index, then the lowest column index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ad.ShapeError(f"hungarian: cost must be 2-d, got shape {cost.shape}")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian: cost matrix must be finite")

    best, _, u, v = _solve(cost)
    tol = _COST_TOL * (1.0 + abs(best))
    # Only near-zero reduced-cost edges can appear in an optimal assignment;
    # using the duals as a pre-filter keeps the refinement near O(n) solves.
    filter_tol = 1e-7 * (1.0 + float(np.abs(cost).max()))
    reduced = cost - u[:, None] - v[None, :]

    pairs: list[tuple[int, int]] = []
    avail = list(range(n_cols))
    fixed = 0.0
    for r in range(n_rows):
        if len(pairs) == min(n_rows, n_cols):
            break
        rest_rows = np.arange(r + 1, n_rows)

        def feasible(c: int) -> bool:
            rest_cols = np.asarray([x for x in avail if x != c], dtype=np.intp)
            sub = _min_cost(cost[np.ix_(rest_rows, rest_cols)])
            return abs(fixed + cost[r, c] + sub - best) <= tol

        chosen = None
        candidates = [c for c in avail if reduced[r, c] <= filter_tol]
        for c in candidates:
            if feasible(c):
                chosen = c
                break
        if chosen is None and len(candidates) < len(avail):
            for c in avail:
                if c in candidates:
                    continue
                if feasible(c):
                    chosen = c
                    break
        if chosen is None:
            # row left unmatched; only possible when rows outnumber columns
            sub = _min_cost(cost[np.ix_(rest_rows, np.asarray(avail, dtype=np.intp))])
            if n_rows <= n_cols or abs(fixed + sub - best) > tol:
                raise RuntimeError("hungarian: refinement lost the optimal cost")
            continue
        pairs.append((r, chosen))
        avail.remove(chosen)
        fixed += cost[r, chosen]
    return pairs


def assignment_cost(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    return float(sum(cost[r, c] for r, c in pairs))


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)))


def _np_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def match_cost(
    mask_logits: np.ndarray,
    class_logits: np.ndarray,
    gt_masks: np.ndarray,
    gt_labels: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> np.ndarray:
    """Prediction-to-instance cost: class likelihood + mask BCE + Dice."""
    gt_masks = np.asarray(gt_masks, dtype=np.float64)
    gt_labels = np.asarray(gt_labels, dtype=np.intp)
    n_pred, n_pix = mask_logits.shape
    if gt_masks.shape[0] != gt_labels.shape[0]:
        raise ad.ShapeError("match_cost: gt masks and labels disagree in length")
    if gt_masks.shape[0] and gt_masks.shape[1] != n_pix:
        raise ad.ShapeError(
            f"match_cost: mask pixel counts disagree ({n_pix} vs {gt_masks.shape[1]})"
        )
    probs = _np_softmax(class_logits, axis=1)
    cost_cls = -probs[:, gt_labels - 1]

    p = _np_sigmoid(mask_logits)
    log_p = np.log(p)
    log_1p = np.log(1.0 - p)
    cost_bce = -(log_p @ gt_masks.T + log_1p @ (1.0 - gt_masks).T) / n_pix

    inter = p @ gt_masks.T
    denom = p.sum(axis=1, keepdims=True) + gt_masks.sum(axis=1, keepdims=True).T
    cost_dice = 1.0 - (2.0 * inter + 1.0) / (denom + 1.0)

    return weights.w_cls * cost_cls + weights.w_bce * cost_bce + weights.w_dice * cost_dice


def match_pairs(
    mask_logits: np.ndarray,
    class_logits: np.ndarray,
    gt_masks: np.ndarray,
    gt_labels: np.ndarray,
    weights: LossWeights,
) -> list[tuple[int, int]]:
    """Hungarian assignment of predictions to ground-truth instances."""
    if len(gt_labels) == 0:
        return []
    return hungarian(match_cost(mask_logits, class_logits, gt_masks, gt_labels, weights))


def set_loss(
    mask_logits: Tensor,
    class_logits: Tensor,
    gt_masks: np.ndarray,
    gt_labels: np.ndarray,
    weights: LossWeights,
    n_classes: int,
    pairs: list[tuple[int, int]] | None = None,
) -> Tensor:
    """Matched pairs pay class CE + mask BCE + Dice; unmatched pay no-object CE.

    Serves both the per-frame and the video-level objective; the caller
    flattens video masks over time before the call.
    """
    n_pred = mask_logits.shape[0]
    gt_masks = np.asarray(gt_masks, dtype=np.float64)
    gt_labels = np.asarray(gt_labels, dtype=np.intp)

    if pairs is None:
        pairs = match_pairs(mask_logits.data, class_logits.data, gt_masks, gt_labels, weights)

    target_cols = np.full(n_pred, n_classes, dtype=np.intp)
    for r, c in pairs:
        target_cols[r] = gt_labels[c] - 1
    onehot = np.zeros((n_pred, n_classes + 1))
    onehot[np.arange(n_pred), target_cols] = 1.0
    log_sm = ad.log(ad.softmax(class_logits, axis=1))
    ce = ad.scale(ad.tsum(ad.mul(ad.constant(onehot), log_sm)), -1.0 / n_pred)
    loss = ad.scale(ce, weights.w_cls)

    if pairs:
        pred_idx = np.array([r for r, _ in pairs], dtype=np.intp)
        gt_sel = gt_masks[[c for _, c in pairs]]
        sel = ad.embedding(mask_logits, pred_idx)
        g = ad.constant(gt_sel)
        p = ad.sigmoid(sel)
        ones = ad.constant(np.ones_like(gt_sel))
        bce = ad.scale(
            ad.tmean(
                ad.add(
                    ad.mul(g, ad.log(p)),
                    ad.mul(ad.constant(1.0 - gt_sel), ad.log(ad.add(ones, ad.scale(p, -1.0)))),
                )
            ),
            -1.0,
        )
        inter = ad.tsum(ad.mul(p, g), axis=1, keepdims=True)
        denom = ad.add(
            ad.tsum(p, axis=1, keepdims=True),
            ad.constant(gt_sel.sum(axis=1, keepdims=True)),
        )
        numer = ad.add(ad.scale(inter, 2.0), ad.constant(np.ones((len(pairs), 1))))
        den = ad.add(denom, ad.constant(np.ones((len(pairs), 1))))
        dice = ad.add(ad.constant(np.ones(())), ad.scale(ad.tmean(ad.div(numer, den)), -1.0))
        loss = ad.add(loss, ad.add(ad.scale(bce, weights.w_bce), ad.scale(dice, weights.w_dice)))
    return loss


def sim_loss(
    frame_queries: list[Tensor],
    frame_mask_logits: list[np.ndarray],
    video_queries: Tensor,
    video_mask_logits: np.ndarray,
    video_assignment: list[tuple[int, int]],
) -> Tensor:
    """Alignment between frame-query and video-query embeddings.

    Video queries matched to ground truth are paired with frame queries
    frame by frame via a soft mask-overlap Hungarian matching; each pair
    contributes one minus the cosine similarity of its embeddings.
    """
    vq_idx = sorted({vq for vq, _ in video_assignment})
    if not vq_idx:
        return ad.constant(np.zeros(()))
    pairs_a: list[Tensor] = []
    pairs_b_idx: list[int] = []
    for t, (fq, fm_logits) in enumerate(zip(frame_queries, frame_mask_logits)):
        fm = _np_sigmoid(fm_logits)
        vm = _np_sigmoid(video_mask_logits[vq_idx, t])
        matches = hungarian(-(fm @ vm.T))
        if not matches:
            continue
        pairs_a.append(ad.embedding(fq, np.array([r for r, _ in matches], dtype=np.intp)))
        pairs_b_idx.extend(vq_idx[c] for _, c in matches)
    if not pairs_a:
        return ad.constant(np.zeros(()))
    a = pairs_a[0] if len(pairs_a) == 1 else ad.concat(pairs_a, axis=0)
    b = ad.embedding(video_queries, np.array(pairs_b_idx, dtype=np.intp))
    dots = ad.tsum(ad.mul(a, b), axis=1, keepdims=True)
    tiny = ad.constant(np.full((a.shape[0], 1), 1e-12))
    norm_a = ad.power(ad.add(ad.tsum(ad.mul(a, a), axis=1, keepdims=True), tiny), 0.5)
    norm_b = ad.power(ad.add(ad.tsum(ad.mul(b, b), axis=1, keepdims=True), tiny), 0.5)
    cos = ad.div(dots, ad.mul(norm_a, norm_b))
    return ad.add(ad.constant(np.ones(())), ad.scale(ad.tmean(cos), -1.0))


def total_loss(
    frame: Tensor,
    video: Tensor,
    sim: Tensor,
    saoc: Tensor,
    lambda_saoc: float,
    sim_weight: float = 0.5,
) -> Tensor:
    """Weighted sum of the four objective components."""
    base = ad.add(ad.add(frame, video), ad.scale(sim, sim_weight))
    return ad.add(base, ad.scale(saoc, lambda_saoc))
