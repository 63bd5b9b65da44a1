"""Pseudo-label quality, recovery error and average precision."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Box3D, bev_iou, iou3d

RECALL_IOU = 0.7
DIFFICULTY_ORDER = ("easy", "moderate", "hard")


class AlignmentError(ValueError):
    def __init__(self, pred_orphans, gt_orphans):
        self.pred_orphans = sorted(pred_orphans)
        self.gt_orphans = sorted(gt_orphans)
        super().__init__(f"pseudo/gt ids differ: {len(self.pred_orphans)} pseudo-only "
                         f"{self.pred_orphans[:10]}, {len(self.gt_orphans)} gt-only {self.gt_orphans[:10]}")


@dataclass(frozen=True)
class MatchResult:
    key: tuple
    iou3d: float
    iou_bev: float


def match_objects(pseudo: dict, gt: dict) -> list[MatchResult]:
    """One result per object id; ``pseudo`` and ``gt`` map ids to boxes."""
    if set(pseudo) != set(gt):
        raise AlignmentError(set(pseudo) - set(gt), set(gt) - set(pseudo))
    return [MatchResult(k, iou3d(pseudo[k], gt[k]), bev_iou(pseudo[k], gt[k])) for k in sorted(gt)]


def quality_from_matches(matches: list[MatchResult], threshold: float = RECALL_IOU):
    if not matches:
        return None, None
    ious = np.array([m.iou3d for m in matches])
    return float(ious.mean()), float(np.mean(ious >= threshold))


def label_quality(pseudo: dict, gt: dict, threshold: float = RECALL_IOU):
    """``(mIoU, recall@threshold, matches)``; both rates are fractions in [0, 1]."""
    matches = match_objects(pseudo, gt)
    miou, recall = quality_from_matches(matches, threshold)
    return miou, recall, matches


def recovery_error(decoded, truth) -> float | None:
    """Mean Euclidean distance between decoded and withheld points; ``None`` if empty."""
    decoded = np.asarray(decoded, dtype=np.float64).reshape(-1, 3)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if decoded.shape != truth.shape:
        raise ValueError(f"shape mismatch {decoded.shape} vs {truth.shape}")
    if len(truth) == 0:
        return None
    return float(np.linalg.norm(decoded - truth, axis=1).mean())


@dataclass(frozen=True)
class Detection:
    frame: str
    box: Box3D
    score: float


@dataclass(frozen=True)
class GroundTruth:
    frame: str
    box: Box3D | None
    difficulty: str  # easy / moderate / hard / ignored


def interpolated_ap(precision: np.ndarray, recall: np.ndarray, points: int = 40) -> float:
    """Area under the interpolated PR curve on ``points`` recall positions, in percent.

    40 points use ``1/40 .. 1`` (recall 0 excluded); 11 points use ``0, 0.1 .. 1``.
    """
    if points == 40:
        grid = np.arange(1, 41) / 40.0
    elif points == 11:
        grid = np.linspace(0.0, 1.0, 11)
    else:
        raise ValueError("points must be 40 or 11")
    total = 0.0
    for r in grid:
        reach = precision[recall >= r - 1e-12]
        total += reach.max() if len(reach) else 0.0
    return 100.0 * total / len(grid)


def _iou(mode: str):
    if mode == "3d":
        return iou3d
    if mode == "bev":
        return bev_iou
    raise ValueError("mode must be '3d' or 'bev'")


def average_precision(detections: list[Detection], gts: list[GroundTruth], iou_threshold: float = 0.7,
                      mode: str = "3d", difficulty: str = "moderate", points: int = 40) -> float | None:
    """AP (percent) for one difficulty; ``None`` when no gt falls in the bin.

    A bin includes every easier object (moderate counts easy ones too). Detections are
    matched greedily in descending score order, each gt at most once, to the unmatched
    gt of highest overlap. A detection that only overlaps gts outside the bin is
    neither a true nor a false positive.
    """
    if difficulty not in DIFFICULTY_ORDER:
        raise ValueError(f"difficulty must be one of {DIFFICULTY_ORDER}")
    overlap = _iou(mode)
    rank = DIFFICULTY_ORDER.index(difficulty)
    in_bin = [g.box is not None and g.difficulty in DIFFICULTY_ORDER[: rank + 1] for g in gts]
    n_gt = sum(in_bin)
    if n_gt == 0:
        return None
    by_frame: dict[str, list[int]] = {}
    for i, g in enumerate(gts):
        if g.box is not None:
            by_frame.setdefault(g.frame, []).append(i)
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, detections[i].frame,
                                  tuple(detections[i].box.as_array())))
    used = np.zeros(len(gts), dtype=bool)
    tp_flags = []
    for i in order:
        d = detections[i]
        best, best_iou, ignored_hit = -1, iou_threshold, False
        for j in by_frame.get(d.frame, []):
            o = overlap(d.box, gts[j].box)
            if o < iou_threshold:
                continue
            if not in_bin[j]:
                ignored_hit = True
                continue
            if not used[j] and o >= best_iou:
                best, best_iou = j, o
        if best >= 0:
            used[best] = True
            tp_flags.append(True)
        elif not ignored_hit:
            tp_flags.append(False)
    if not tp_flags:
        return 0.0
    tp = np.cumsum(tp_flags)
    precision = tp / np.arange(1, len(tp) + 1)
    recall = tp / n_gt
    return interpolated_ap(precision, recall, points)


def ap_table(detections, gts, iou_threshold: float = 0.7, points: int = 40) -> dict:
    return {mode: {d: average_precision(detections, gts, iou_threshold, mode, d, points)
                   for d in DIFFICULTY_ORDER} for mode in ("3d", "bev")}
