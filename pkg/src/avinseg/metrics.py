"""Evaluation suite for mask trajectories.

Covers trajectory mAP under spatio-temporal IoU, HOTA (detection and
association accuracy under frame-wise bijective matching), and FSLA, the
fraction of frames whose predicted instances match the ground truth in
count, category, and per-object IoU, averaged over an IoU-threshold sweep.
FSLA is also decomposed over silent, single-source and multi-source frames.

All matching inside the suite reuses the deterministic Hungarian solver
from :mod:`avinseg.matching`.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from avinseg.matching import hungarian
from avinseg.tracker import InstanceTrajectory

FSLA_ALPHAS = tuple(i / 20.0 for i in range(1, 20))  # 0.05 .. 0.95
HOTA_ALPHAS = FSLA_ALPHAS
MAP_IOU_THRESHOLDS = tuple(i / 20.0 for i in range(10, 20))  # 0.50 .. 0.95


@dataclass
class EvalVideo:
    """One video's ground truth and predictions, plus per-frame GT counts."""

    video_id: str
    t: int
    h: int
    w: int
    gt: list[InstanceTrajectory]
    pred: list[InstanceTrajectory]
    counts: list[int]
    pred_counts: list[int] | None = None
    _gt_bin: np.ndarray | None = field(default=None, repr=False)
    _pred_bin: np.ndarray | None = field(default=None, repr=False)

    def gt_bin(self) -> np.ndarray:
        if self._gt_bin is None:
            self._gt_bin = _binarize(self.gt, self.t, self.h, self.w)
        return self._gt_bin

    def pred_bin(self) -> np.ndarray:
        if self._pred_bin is None:
            self._pred_bin = _binarize(self.pred, self.t, self.h, self.w)
        return self._pred_bin


def _binarize(trajs: list[InstanceTrajectory], t: int, h: int, w: int) -> np.ndarray:
    out = np.zeros((len(trajs), t, h, w), dtype=bool)
    for i, traj in enumerate(trajs):
        if traj.masks.shape != (t, h, w):
            raise ValueError(
                f"trajectory mask shape {traj.masks.shape} does not match video {(t, h, w)}"
            )
        out[i] = traj.masks >= 0.5
    return out


def st_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Spatio-temporal IoU over full trajectories; identical-empty pairs score 1."""
    if a.shape != b.shape:
        raise ValueError(f"st_iou: shapes {a.shape} and {b.shape} differ")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def _mask_iou_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two stacks of binary masks (flattened pixels)."""
    p = pred.reshape(pred.shape[0], -1).astype(np.float64)
    g = gt.reshape(gt.shape[0], -1).astype(np.float64)
    inter = p @ g.T
    union = p.sum(axis=1, keepdims=True) + g.sum(axis=1, keepdims=True).T - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
    return iou


# -- mAP ---------------------------------------------------------------------


def _average_precision(scores: list[tuple[float, int, int, bool]], n_gt: int) -> float:
    """101-point interpolated AP from (confidence, video, pred, is_tp) entries."""
    if n_gt == 0:
        return 0.0
    if not scores:
        return 0.0
    ordered = sorted(scores, key=lambda s: (-s[0], s[1], s[2]))
    tp = np.cumsum([1.0 if s[3] else 0.0 for s in ordered])
    fp = np.cumsum([0.0 if s[3] else 1.0 for s in ordered])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-300)
    # precision envelope from the right, sampled at 101 recall points
    env = precision.copy()
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        idx = np.searchsorted(recall, r, side="left")
        ap += env[idx] if idx < len(env) else 0.0
    return ap / 101.0


def map_score(videos: list[EvalVideo]) -> tuple[float, list[float]]:
    """Trajectory mAP over classes and the 0.50:0.05:0.95 ST-IoU grid.

    Returns the headline score (x100) and the per-threshold breakdown.
    """
    classes = sorted({traj.label for v in videos for traj in v.gt})
    if not classes:
        return 0.0, [0.0] * len(MAP_IOU_THRESHOLDS)

    # cache trajectory IoUs per (video, class)
    per_class: dict[int, list] = {c: [] for c in classes}
    for vi, video in enumerate(videos):
        gt_bin = video.gt_bin()
        pred_bin = video.pred_bin()
        for c in classes:
            gt_idx = [i for i, tr in enumerate(video.gt) if tr.label == c]
            pred_idx = [i for i, tr in enumerate(video.pred) if tr.label == c]
            ious = np.zeros((len(pred_idx), len(gt_idx)))
            for a, pi in enumerate(pred_idx):
                for b, gi in enumerate(gt_idx):
                    ious[a, b] = st_iou(pred_bin[pi], gt_bin[gi])
            confs = [video.pred[i].confidence for i in pred_idx]
            per_class[c].append((vi, gt_idx, pred_idx, confs, ious))

    per_thr_aps = []
    class_aps = {c: [] for c in classes}
    for thr in MAP_IOU_THRESHOLDS:
        thr_aps = []
        for c in classes:
            entries = []  # (conf, video, pred_rank, is_tp)
            n_gt = 0
            ranked = []
            for vi, gt_idx, pred_idx, confs, ious in per_class[c]:
                n_gt += len(gt_idx)
                for a, pi in enumerate(pred_idx):
                    ranked.append((confs[a], vi, pi, a, ious))
            ranked.sort(key=lambda s: (-s[0], s[1], s[2]))
            taken: dict[int, set] = defaultdict(set)
            for conf, vi, pi, a, ious in ranked:
                best_b, best_iou = -1, -1.0
                for b in range(ious.shape[1]):
                    if b in taken[vi]:
                        continue
                    if ious[a, b] >= thr and ious[a, b] > best_iou:
                        best_b, best_iou = b, ious[a, b]
                if best_b >= 0:
                    taken[vi].add(best_b)
                    entries.append((conf, vi, pi, True))
                else:
                    entries.append((conf, vi, pi, False))
            ap = _average_precision(entries, n_gt)
            thr_aps.append(ap)
            class_aps[c].append(ap)
        per_thr_aps.append(float(np.mean(thr_aps)))
    overall = float(np.mean([np.mean(class_aps[c]) for c in classes])) * 100.0
    return overall, [a * 100.0 for a in per_thr_aps]


# -- HOTA ----------------------------------------------------------------


def hota(videos: list[EvalVideo]) -> dict:
    """HOTA / DetA / AssA averaged over the 19-point alpha sweep."""
    # candidate matches per frame: (video, pred, gt, iou), plus presence totals
    candidates = []
    gt_presence: dict[tuple[int, int], int] = defaultdict(int)
    pred_presence: dict[tuple[int, int], int] = defaultdict(int)
    total_gt = 0
    total_pred = 0
    for vi, video in enumerate(videos):
        gt_bin = video.gt_bin()
        pred_bin = video.pred_bin()
        for t in range(video.t):
            gp = [j for j in range(len(video.gt)) if gt_bin[j, t].any()]
            pp = [i for i in range(len(video.pred)) if pred_bin[i, t].any()]
            total_gt += len(gp)
            total_pred += len(pp)
            for j in gp:
                gt_presence[(vi, j)] += 1
            for i in pp:
                pred_presence[(vi, i)] += 1
            if gp and pp:
                iou = _mask_iou_matrix(pred_bin[pp, t], gt_bin[gp, t])
                for a, b in hungarian(-iou):
                    candidates.append((vi, pp[a], gp[b], float(iou[a, b])))

    det_as, ass_as, hotas = [], [], []
    for alpha in HOTA_ALPHAS:
        tokens = [(vi, pi, gi) for vi, pi, gi, iou in candidates if iou >= alpha]
        tp = len(tokens)
        fn = total_gt - tp
        fp = total_pred - tp
        if tp + fn + fp == 0:
            det_a, ass_a = 1.0, 1.0
        else:
            det_a = tp / (tp + fn + fp)
            if tp == 0:
                ass_a = 0.0
            else:
                pair_counts: dict[tuple[int, int, int], int] = defaultdict(int)
                for tok in tokens:
                    pair_counts[tok] += 1
                acc = 0.0
                for vi, pi, gi in tokens:
                    tpa = pair_counts[(vi, pi, gi)]
                    fna = gt_presence[(vi, gi)] - tpa
                    fpa = pred_presence[(vi, pi)] - tpa
                    acc += tpa / (tpa + fna + fpa)
                ass_a = acc / tp
        det_as.append(det_a)
        ass_as.append(ass_a)
        hotas.append(float(np.sqrt(det_a * ass_a)))
    return {
        "HOTA": float(np.mean(hotas)) * 100.0,
        "DetA": float(np.mean(det_as)) * 100.0,
        "AssA": float(np.mean(ass_as)) * 100.0,
        "per_alpha": {
            "alpha": list(HOTA_ALPHAS),
            "HOTA": [h * 100.0 for h in hotas],
            "DetA": [d * 100.0 for d in det_as],
            "AssA": [a * 100.0 for a in ass_as],
        },
    }


# -- FSLA ----------------------------------------------------------------


def fsla(videos: list[EvalVideo]) -> dict:
    """Frame-level sound localization accuracy with silent/single/multi splits.

    A frame is correct at threshold alpha iff predicted and GT instance
    counts match, the IoU-optimal bijection is category-consistent, and
    every matched pair reaches IoU >= alpha. A frame with any wrong-category
    match is incorrect at every alpha.
    """
    n_alpha = len(FSLA_ALPHAS)
    alphas = np.array(FSLA_ALPHAS)
    buckets = {"all": [], "n": [], "s": [], "m": []}
    for video in videos:
        gt_bin = video.gt_bin()
        pred_bin = video.pred_bin()
        for t in range(video.t):
            gp = [j for j in range(len(video.gt)) if gt_bin[j, t].any()]
            pp = [i for i in range(len(video.pred)) if pred_bin[i, t].any()]
            if len(gp) != len(pp):
                correct = np.zeros(n_alpha)
            elif not gp:
                correct = np.ones(n_alpha)
            else:
                iou = _mask_iou_matrix(pred_bin[pp, t], gt_bin[gp, t])
                pairs = hungarian(-iou)
                labels_ok = all(
                    video.pred[pp[a]].label == video.gt[gp[b]].label for a, b in pairs
                )
                if not labels_ok:
                    correct = np.zeros(n_alpha)
                else:
                    min_iou = min(iou[a, b] for a, b in pairs)
                    correct = (alphas <= min_iou).astype(np.float64)
            buckets["all"].append(correct)
            gt_count = video.counts[t]
            key = "n" if gt_count == 0 else ("s" if gt_count == 1 else "m")
            buckets[key].append(correct)

    def summarize(rows):
        if not rows:
            return 0.0, [0.0] * n_alpha
        arr = np.stack(rows)
        return float(arr.mean()) * 100.0, [float(x) * 100.0 for x in arr.mean(axis=0)]

    overall, per_alpha = summarize(buckets["all"])
    silent, _ = summarize(buckets["n"])
    single, _ = summarize(buckets["s"])
    multi, _ = summarize(buckets["m"])
    return {
        "FSLA": overall,
        "FSLAn": silent,
        "FSLAs": single,
        "FSLAm": multi,
        "frame_counts": {k: len(v) for k, v in buckets.items()},
        "per_alpha": {"alpha": list(FSLA_ALPHAS), "FSLA": per_alpha},
    }


# -- combined report -------------------------------------------------------


@dataclass
class MetricReport:
    mAP: float
    HOTA: float
    DetA: float
    AssA: float
    FSLA: float
    FSLAn: float
    FSLAs: float
    FSLAm: float
    count_mae: float | None = None
    count_mae_silent: float | None = None
    count_mae_single: float | None = None
    count_mae_multi: float | None = None
    per_alpha: dict = field(default_factory=dict)
    per_iou_ap: list = field(default_factory=list)

    CSV_FIELDS = (
        "mAP",
        "HOTA",
        "DetA",
        "AssA",
        "FSLA",
        "FSLAn",
        "FSLAs",
        "FSLAm",
        "count_mae",
        "count_mae_silent",
        "count_mae_single",
        "count_mae_multi",
    )

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.CSV_FIELDS}
        out["per_alpha"] = self.per_alpha
        out["per_iou_ap"] = self.per_iou_ap
        return out

    def csv_rows(self) -> tuple[str, str]:
        header = ",".join(self.CSV_FIELDS)
        vals = []
        for k in self.CSV_FIELDS:
            v = getattr(self, k)
            vals.append("" if v is None else repr(float(v)))
        return header, ",".join(vals)


def count_errors(videos: list[EvalVideo]) -> dict | None:
    """Mean absolute error of decoded per-frame counts, overall and per split."""
    diffs = {"all": [], "n": [], "s": [], "m": []}
    any_counts = False
    for video in videos:
        if video.pred_counts is None:
            continue
        any_counts = True
        for t in range(video.t):
            err = abs(video.pred_counts[t] - video.counts[t])
            diffs["all"].append(err)
            key = "n" if video.counts[t] == 0 else ("s" if video.counts[t] == 1 else "m")
            diffs[key].append(err)
    if not any_counts:
        return None
    return {
        k: (float(np.mean(v)) if v else None)
        for k, v in (("all", diffs["all"]), ("n", diffs["n"]), ("s", diffs["s"]), ("m", diffs["m"]))
    }


def evaluate(videos: list[EvalVideo]) -> MetricReport:
    overall_map, per_iou = map_score(videos)
    h = hota(videos)
    f = fsla(videos)
    maes = count_errors(videos)
    return MetricReport(
        mAP=overall_map,
        HOTA=h["HOTA"],
        DetA=h["DetA"],
        AssA=h["AssA"],
        FSLA=f["FSLA"],
        FSLAn=f["FSLAn"],
        FSLAs=f["FSLAs"],
        FSLAm=f["FSLAm"],
        count_mae=None if maes is None else maes["all"],
        count_mae_silent=None if maes is None else maes["n"],
        count_mae_single=None if maes is None else maes["s"],
        count_mae_multi=None if maes is None else maes["m"],
        per_alpha={
            "alpha": list(FSLA_ALPHAS),
            "HOTA": h["per_alpha"]["HOTA"],
            "DetA": h["per_alpha"]["DetA"],
            "AssA": h["per_alpha"]["AssA"],
            "FSLA": f["per_alpha"]["FSLA"],
        },
        per_iou_ap=per_iou,
    )
