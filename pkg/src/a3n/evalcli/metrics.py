"""Detection and grasp metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import PairingError
from ..grasp import approach_angle_deg

UNDEFINED = None   # marker for IoU averages over zero true positives


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    union = np.count_nonzero(a | b)
    return float(np.count_nonzero(a & b) / union) if union else 0.0


@dataclass
class Matching:
    tp: list[tuple[int, int]] = field(default_factory=list)    # (pred index, truth index)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)
    box_ious: list[float] = field(default_factory=list)        # aligned with tp
    mask_ious: list[float] = field(default_factory=list)       # aligned with tp when masks exist


def match_detections(preds, truths, iou_threshold: float = 0.5, score_threshold: float = 0.5) -> Matching:
    """Greedy one-to-one matching.

    ``preds`` need ``score`` and ``box`` (and optionally ``mask``); ``truths``
    need ``box`` (and optionally ``mask``). Predictions are visited by
    descending score; each takes the free truth of highest box IoU, and is a
    true positive when that IoU exceeds ``iou_threshold``. Predictions at or
    below ``score_threshold`` are ignored.
    """
    order = sorted((i for i, p in enumerate(preds) if p.score > score_threshold),
                   key=lambda i: (-preds[i].score, *np.asarray(preds[i].box, dtype=float).tolist()))
    free = set(range(len(truths)))
    m = Matching()
    for i in order:
        p = preds[i]
        best, best_iou = None, -1.0
        for j in sorted(free):
            iou = box_iou(p.box, truths[j].box)
            if iou > best_iou:
                best, best_iou = j, iou
        if best is not None and best_iou > iou_threshold:
            free.discard(best)
            m.tp.append((i, best))
            m.box_ious.append(best_iou)
            pm, tm = getattr(p, "mask", None), getattr(truths[best], "mask", None)
            if pm is not None and tm is not None:
                m.mask_ious.append(mask_iou(pm, tm))
        else:
            m.fp.append(i)
    m.fn = sorted(free)
    return m


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    iou_det: float | None
    iou_seg: float | None
    tp: int
    fp: int
    fn: int


def compute_metrics(matchings: Matching | list[Matching]) -> DetectionMetrics:
    """Pool one or more matchings. IoU fields are ``UNDEFINED`` without true positives."""
    if isinstance(matchings, Matching):
        matchings = [matchings]
    tp = sum(len(m.tp) for m in matchings)
    fp = sum(len(m.fp) for m in matchings)
    fn = sum(len(m.fn) for m in matchings)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    box = [v for m in matchings for v in m.box_ious]
    seg = [v for m in matchings for v in m.mask_ious]
    return DetectionMetrics(p, r, f1, float(np.mean(box)) if box else UNDEFINED,
                            float(np.mean(seg)) if seg else UNDEFINED, tp, fp, fn)


@dataclass(frozen=True)
class GraspMetrics:
    rmse_centre: float           # cm
    rmse_angular: float          # degrees
    centre_residuals: tuple      # cm, one per pair
    angular_residuals: tuple     # degrees

    @property
    def n(self) -> int:
        return len(self.centre_residuals)


def _rms(v) -> float:
    return float(np.sqrt(np.mean(np.square(v)))) if len(v) else float("nan")


def grasp_rmse(preds: Mapping, truths: Mapping) -> GraspMetrics:
    """RMSE over poses paired by key (fruit id). Keys must match exactly."""
    if set(preds) != set(truths):
        missing = sorted(set(truths) - set(preds), key=str)
        extra = sorted(set(preds) - set(truths), key=str)
        raise PairingError(f"prediction/truth ids differ: missing {missing[:5]}, unexpected {extra[:5]}")
    keys = sorted(preds, key=str)
    centre = tuple(float(np.linalg.norm(preds[k].centre - truths[k].centre)) * 100.0 for k in keys)
    angular = tuple(approach_angle_deg(preds[k], truths[k]) for k in keys)
    return GraspMetrics(_rms(centre), _rms(angular), centre, angular)


def pool(metrics: list[GraspMetrics]) -> GraspMetrics:
    c = tuple(v for m in metrics for v in m.centre_residuals)
    a = tuple(v for m in metrics for v in m.angular_residuals)
    return GraspMetrics(_rms(c), _rms(a), c, a)
