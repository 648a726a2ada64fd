"""Instance detections and prototype-mask assembly."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ShapeError


@dataclass(frozen=True)
class InstanceDetection:
    score: float
    box: np.ndarray            # (x_min, y_min, x_max, y_max) pixels
    class_id: int = 0
    coefficients: np.ndarray | None = None
    mask: np.ndarray | None = None   # H x W in [0, 1]

    def __post_init__(self):
        box = np.asarray(self.box, dtype=np.float64).reshape(4)
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ValueError(f"degenerate box {box}")
        object.__setattr__(self, "box", box)
        if self.coefficients is not None:
            object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=np.float64))

    def binary_mask(self, threshold: float = 0.5) -> np.ndarray:
        if self.mask is None:
            raise ValueError("detection has no assembled mask")
        return self.mask > threshold


def box_crop_mask(boxes: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(n, H, W) indicator of pixels whose centre lies inside each box."""
    u = torch.arange(width, dtype=boxes.dtype) + 0.5
    v = torch.arange(height, dtype=boxes.dtype) + 0.5
    inx = (u[None, :] >= boxes[:, 0:1]) & (u[None, :] <= boxes[:, 2:3])
    iny = (v[None, :] >= boxes[:, 1:2]) & (v[None, :] <= boxes[:, 3:4])
    return (iny[:, :, None] & inx[:, None, :]).to(boxes.dtype)


def assemble_logits(protos: torch.Tensor, coefficients: torch.Tensor, out_size: tuple[int, int]) -> torch.Tensor:
    """Linear combination of prototypes, bilinearly upsampled: (n, H, W) pre-sigmoid."""
    if protos.shape[-1] != coefficients.shape[-1]:
        raise ShapeError(f"prototype k={protos.shape[-1]} does not match coefficient k={coefficients.shape[-1]}")
    lin = torch.einsum("hwk,nk->nhw", protos, coefficients)
    if tuple(lin.shape[-2:]) != tuple(out_size):
        lin = F.interpolate(lin.unsqueeze(1), size=out_size, mode="bilinear", align_corners=False).squeeze(1)
    return lin


def assemble(protos: torch.Tensor, coefficients: torch.Tensor, boxes: torch.Tensor,
             out_size: tuple[int, int]) -> torch.Tensor:
    """sigmoid(protos . coeff) at image size, zeroed outside each box."""
    masks = torch.sigmoid(assemble_logits(protos, coefficients, out_size))
    return masks * box_crop_mask(boxes, *out_size)


def assemble_masks(protos, dets: list[InstanceDetection], image_size: tuple[int, int]) -> list[InstanceDetection]:
    """Attach an assembled, box-cropped mask to every detection."""
    if not dets:
        return []
    p = torch.as_tensor(np.asarray(protos), dtype=torch.float64)
    k = p.shape[-1]
    for d in dets:
        if d.coefficients is None or d.coefficients.shape != (k,):
            raise ShapeError(f"coefficients must have length {k}")
    coeff = torch.as_tensor(np.stack([d.coefficients for d in dets]), dtype=torch.float64)
    boxes = torch.as_tensor(np.stack([d.box for d in dets]), dtype=torch.float64)
    masks = assemble(p, coeff, boxes, image_size).numpy()
    return [replace(d, mask=m) for d, m in zip(dets, masks)]


def _iou_np(a: np.ndarray, b: np.ndarray) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def postprocess(dets: list[InstanceDetection], score_threshold: float = 0.5, nms_iou: float = 0.5,
                image_size: tuple[int, int] | None = None) -> list[InstanceDetection]:
    """Drop scores at or below threshold, clip to the image, then greedy NMS by score.

    Ties are broken on box coordinates so the result does not depend on the
    input order.
    """
    kept = []
    for d in dets:
        if not d.score > score_threshold:
            continue
        if image_size is not None:
            h, w = image_size
            box = np.array([np.clip(d.box[0], 0, w), np.clip(d.box[1], 0, h),
                            np.clip(d.box[2], 0, w), np.clip(d.box[3], 0, h)])
            if not (box[0] < box[2] and box[1] < box[3]):
                continue
            d = replace(d, box=box)
        kept.append(d)
    kept.sort(key=lambda d: (-d.score, *d.box.tolist(), d.class_id))
    out: list[InstanceDetection] = []
    for d in kept:
        if all(o.class_id != d.class_id or _iou_np(o.box, d.box) <= nms_iou for o in out):
            out.append(d)
    return out
