"""Evaluation metrics: depth error, detection mAP, keypoint AP.

Average precision uses greedy score-ordered matching and all-point
interpolation of the precision-recall curve (area under the precision
envelope), so a false positive ranked below the last true positive
does not lower AP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import iou_3d
from .nets.human_pose import oks_similarity


@dataclass
class DepthMetrics:
    abs_rel: float
    rms: float
    delta_1_25: float


@dataclass
class APResult:
    per_class: dict = field(default_factory=dict)
    mean_ap: float = 0.0
    matched: int = 0
    unmatched: int = 0      # false positives
    missed: int = 0         # ground truth never matched


def depth_metrics(pred, gt, valid_mask=None):
    """AbsRel, RMS, and the delta < 1.25 fraction over valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError(f"depth_metrics: shape mismatch {pred.shape} vs {gt.shape}")
    mask = gt > 0
    if valid_mask is not None:
        mask &= np.asarray(valid_mask, dtype=bool)
    if not mask.any():
        raise DataError("depth_metrics: empty valid mask")
    p, g = pred[mask], gt[mask]
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(abs_rel=float(np.mean(np.abs(p - g) / g)),
                        rms=float(np.sqrt(np.mean((p - g) ** 2))),
                        delta_1_25=float(np.mean(ratio < 1.25)))


def _average_precision(scores, is_tp, n_pos):
    """All-point-interpolated AP from per-prediction scores and TP flags."""
    if n_pos == 0:
        return 0.0
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(is_tp, dtype=np.float64)[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_pos
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _greedy_match(preds, gts, similarity, threshold):
    """Score-ordered greedy matching within one class.

    preds: list of (frame, score, payload); gts: dict frame -> list of
    gt payloads. Returns (scores, tp_flags, n_matched).
    """
    taken = {f: [False] * len(v) for f, v in gts.items()}
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    scores = [0.0] * len(preds)
    flags = [False] * len(preds)
    for rank, i in enumerate(order):
        frame, score, payload = preds[i]
        scores[rank] = score
        best, best_sim = -1, threshold
        for j, gt in enumerate(gts.get(frame, [])):
            if taken[frame][j]:
                continue
            sim = similarity(payload, gt)
            if sim >= best_sim:
                best, best_sim = j, sim
        if best >= 0:
            taken[frame][best] = True
            flags[rank] = True
    return scores, flags, sum(sum(v) for v in taken.values())


def map_3d(pred_boxes, gt_boxes, iou_threshold=0.25):
    """mAP over the object classes present in the ground truth.

    pred_boxes / gt_boxes: one list of Box3D per frame, index-aligned.
    """
    if len(pred_boxes) != len(gt_boxes):
        raise DataError("map_3d: prediction and ground-truth frame counts differ")
    classes = sorted({b.class_id for frame in gt_boxes for b in frame})
    if not classes:
        raise DataError("map_3d: ground truth contains no boxes")
    result = APResult()
    for c in classes:
        preds = [(f, b.score, b) for f, frame in enumerate(pred_boxes)
                 for b in frame if b.class_id == c]
        gts = {f: [b for b in frame if b.class_id == c]
               for f, frame in enumerate(gt_boxes)}
        gts = {f: v for f, v in gts.items() if v}
        n_pos = sum(len(v) for v in gts.values())
        scores, flags, n_match = _greedy_match(
            preds, gts, lambda p, g: iou_3d(p, g), iou_threshold)
        result.per_class[c] = _average_precision(scores, flags, n_pos)
        result.matched += n_match
        result.unmatched += len(preds) - n_match
        result.missed += n_pos - n_match
    result.mean_ap = float(np.mean(list(result.per_class.values())))
    return result


def keypoint_ap(pred_persons, gt_keypoints, oks_threshold=0.75):
    """AP of person detections scored by OKS against true keypoints.

    pred_persons: per image, a list of dicts with score and keypoints
    (K,2) (the pose head's decode output). gt_keypoints: per image, an
    array (P,K,3). People with no visible keypoints are dropped from
    the ground truth: they cannot be scored.
    """
    if len(pred_persons) != len(gt_keypoints):
        raise DataError("keypoint_ap: prediction and ground-truth image counts differ")
    preds = [(f, p["score"], np.asarray(p["keypoints"]))
             for f, persons in enumerate(pred_persons) for p in persons]
    gts = {}
    for f, people in enumerate(gt_keypoints):
        keep = [np.asarray(person) for person in np.asarray(people)
                if (np.asarray(person)[:, 2] > 0).any()]
        if keep:
            gts[f] = keep
    n_pos = sum(len(v) for v in gts.values())
    if n_pos == 0:
        raise DataError("keypoint_ap: no visible ground-truth people")
    scores, flags, n_match = _greedy_match(preds, gts, oks_similarity, oks_threshold)
    ap = _average_precision(scores, flags, n_pos)
    return APResult(per_class={0: ap}, mean_ap=ap, matched=n_match,
                    unmatched=len(preds) - n_match, missed=n_pos - n_match)
