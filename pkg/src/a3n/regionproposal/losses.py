"""Detection and mask losses for the region proposal network."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F

from .anchors import encode, match
from .masks import assemble_logits, box_crop_mask

MAX_MASKS_PER_IMAGE = 64


class RegionLosses(NamedTuple):
    cls: torch.Tensor
    box: torch.Tensor
    mask: torch.Tensor
    total: torch.Tensor


def weighted_total(l_cls, l_box, l_mask, weights=(1.0, 1.0, 2.5)):
    return weights[0] * l_cls + weights[1] * l_box + weights[2] * l_mask


def binary_kl(pred_logits: torch.Tensor, target_logits: torch.Tensor) -> torch.Tensor:
    """BCE of sigmoid(pred) against the soft label sigmoid(target), minus the label's entropy.

    Same gradient as plain BCE but zero at a perfect prediction.
    """
    q = torch.sigmoid(target_logits)
    bce = F.binary_cross_entropy_with_logits(pred_logits, q, reduction="none")
    ent = F.binary_cross_entropy_with_logits(target_logits, q, reduction="none")
    return bce - ent


def region_losses(out: dict, truths: list[dict], anchors: torch.Tensor, box_loss: str = "bce",
                  pos_iou: float = 0.5, neg_iou: float = 0.4, negative_ratio: int = 3,
                  weights=(1.0, 1.0, 2.5), image_size: tuple[int, int] | None = None) -> RegionLosses:
    """``truths[b]`` holds ``boxes`` (n,4), ``labels`` (n,) and ``masks`` (n,H,W).

    L_cls: BCE on confidence over positives plus the hardest negatives
    (``negative_ratio`` per positive, at least ``negative_ratio``), plus class
    BCE on positives. L_box: over positives. L_mask: mean squared error of
    assembled masks against truth, inside the truth box.
    """
    conf, box, cls_logits, coeff, protos = (out[k] for k in ("confidence", "box", "class_logits",
                                                              "coefficients", "protos"))
    dtype = conf.dtype
    zero = conf.sum() * 0.0
    conf_terms, cls_terms, box_terms, mask_terms = [], [], [], []
    for b, truth in enumerate(truths):
        boxes = truth["boxes"].to(dtype)
        assigned, positive, negative = match(anchors.to(dtype), boxes, pos_iou, neg_iou)
        n_pos = int(positive.sum())
        conf_bce = F.binary_cross_entropy_with_logits(conf[b], positive.to(dtype), reduction="none")
        neg_loss = torch.where(negative, conf_bce.detach(), torch.full_like(conf_bce, -1.0))
        n_neg = min(int(negative.sum()), negative_ratio * max(n_pos, 1))
        hard = torch.topk(neg_loss, n_neg).indices if n_neg > 0 else torch.zeros(0, dtype=torch.long)
        conf_terms.append(torch.cat([conf_bce[positive], conf_bce[hard]]))
        if n_pos == 0:
            continue
        idx = assigned[positive]
        onehot = F.one_hot(truth["labels"][idx].long(), cls_logits.shape[-1]).to(dtype)
        cls_terms.append(F.binary_cross_entropy_with_logits(cls_logits[b][positive], onehot, reduction="none").mean(-1))
        target = encode(boxes[idx], anchors.to(dtype)[positive])
        pred = box[b][positive]
        if box_loss == "bce":
            box_terms.append(binary_kl(pred, target).mean(-1))
        else:
            box_terms.append(F.smooth_l1_loss(pred, target, reduction="none").mean(-1))
        pos_idx = torch.nonzero(positive).squeeze(1)[:MAX_MASKS_PER_IMAGE]
        midx = assigned[pos_idx]
        gt_masks = truth["masks"][midx].to(dtype)
        size = tuple(gt_masks.shape[-2:]) if image_size is None else image_size
        pred_masks = torch.sigmoid(assemble_logits(protos[b], coeff[b][pos_idx], size))
        inside = box_crop_mask(boxes[midx], *size)
        sq = (pred_masks - gt_masks) ** 2 * inside
        mask_terms.append(sq.sum(dim=(1, 2)) / inside.sum(dim=(1, 2)).clamp(min=1.0))

    l_conf = torch.cat(conf_terms).mean() if conf_terms and sum(len(t) for t in conf_terms) else zero
    l_cls = l_conf + (torch.cat(cls_terms).mean() if cls_terms else zero)
    l_box = torch.cat(box_terms).mean() if box_terms else zero
    l_mask = torch.cat(mask_terms).mean() if mask_terms else zero
    return RegionLosses(l_cls, l_box, l_mask, weighted_total(l_cls, l_box, l_mask, weights))
