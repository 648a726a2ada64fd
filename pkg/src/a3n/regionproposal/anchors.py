"""Anchor generation, box coding and anchor-to-truth matching."""
from __future__ import annotations

import math

import numpy as np
import torch

# Offsets are divided by these before the loss, as in SSD-style coders.
CENTRE_VARIANCE = 0.1
SIZE_VARIANCE = 0.2
MAX_LOG_SIZE = math.log(1000.0 / 16)


def make_anchors(image_size: int, strides, sizes, ratios) -> torch.Tensor:
    """(A, 4) xyxy anchors ordered level, row, column, ratio (matching head output)."""
    out = []
    for stride, size in zip(strides, sizes):
        n = image_size // stride
        ys, xs = torch.meshgrid(torch.arange(n, dtype=torch.float64), torch.arange(n, dtype=torch.float64),
                                indexing="ij")
        cx = (xs + 0.5) * stride
        cy = (ys + 0.5) * stride
        per = []
        for r in ratios:
            w = size * math.sqrt(r)
            h = size / math.sqrt(r)
            per.append(torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1))
        out.append(torch.stack(per, dim=2).reshape(-1, 4))
    return torch.cat(out, dim=0).float()


def box_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU between (N,4) and (M,4) xyxy boxes."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    lt = torch.max(a[:, None, :2], b[None, :, :2])
    rb = torch.min(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return torch.where(union > 0, inter / union.clamp(min=1e-12), torch.zeros_like(inter))


def encode(boxes: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + aw / 2
    ay = anchors[:, 1] + ah / 2
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + bw / 2
    by = boxes[:, 1] + bh / 2
    return torch.stack([
        (bx - ax) / aw / CENTRE_VARIANCE,
        (by - ay) / ah / CENTRE_VARIANCE,
        torch.log(bw / aw) / SIZE_VARIANCE,
        torch.log(bh / ah) / SIZE_VARIANCE,
    ], dim=-1)


def decode(deltas: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    aw = anchors[..., 2] - anchors[..., 0]
    ah = anchors[..., 3] - anchors[..., 1]
    ax = anchors[..., 0] + aw / 2
    ay = anchors[..., 1] + ah / 2
    cx = ax + deltas[..., 0] * CENTRE_VARIANCE * aw
    cy = ay + deltas[..., 1] * CENTRE_VARIANCE * ah
    w = aw * torch.exp((deltas[..., 2] * SIZE_VARIANCE).clamp(max=MAX_LOG_SIZE))
    h = ah * torch.exp((deltas[..., 3] * SIZE_VARIANCE).clamp(max=MAX_LOG_SIZE))
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def match(anchors: torch.Tensor, truth_boxes: torch.Tensor, pos_iou: float = 0.5, neg_iou: float = 0.4,
          force_best: bool = True):
    """Assign each anchor a truth index.

    Returns ``(assigned, positive, negative)``: ``assigned`` indexes
    ``truth_boxes`` (valid where positive). Anchors with IoU > ``pos_iou`` are
    positive, IoU < ``neg_iou`` negative, the rest ignored. With
    ``force_best`` each truth's highest-IoU anchor is also positive.
    """
    n_anchor = anchors.shape[0]
    if truth_boxes.numel() == 0:
        return (torch.zeros(n_anchor, dtype=torch.long), torch.zeros(n_anchor, dtype=torch.bool),
                torch.ones(n_anchor, dtype=torch.bool))
    iou = box_iou(anchors, truth_boxes)
    best_iou, assigned = iou.max(dim=1)
    positive = best_iou > pos_iou
    negative = best_iou < neg_iou
    if force_best:
        best_anchor = iou.argmax(dim=0)
        for t, a in enumerate(best_anchor.tolist()):
            assigned[a] = t
            positive[a] = True
            negative[a] = False
    return assigned, positive, negative
