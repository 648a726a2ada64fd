"""Training loop and inference wrapper for the region proposal network."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..errors import DivergenceError
from ..scenesim.dataset import frame_records, instance_truths, load_frame
from ..weights import load_state, read_manifest_checked, save_module
from .anchors import decode
from .losses import region_losses
from .masks import InstanceDetection, assemble_masks, postprocess
from .model import RegionConfig, RegionProposalNet

log = logging.getLogger(__name__)


@dataclass
class RegionTrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay: float = 0.95
    freeze_fraction: float = 0.1
    max_steps: int = 0             # 0 = no cap
    min_visible_pixels: int = 40
    hflip: bool = True
    seed: int = 0


@dataclass
class RegionSample:
    image: np.ndarray        # H x W x 3 uint8
    boxes: np.ndarray        # n x 4
    masks: np.ndarray        # n x H x W bool


def samples_from_dataset(data_dir, split: str = "train", min_pixels: int = 40) -> list[RegionSample]:
    out = []
    for rec in frame_records(data_dir, split):
        frame, _ = load_frame(data_dir, rec.scene_id, rec.index)
        out.append(sample_from_frame(frame.rgb, frame.instance_id, min_pixels))
    return out


def sample_from_frame(rgb, instance_id, min_pixels: int = 40) -> RegionSample:
    kept, _ = instance_truths(instance_id, min_pixels)
    h, w = instance_id.shape
    boxes = np.array([t.box for t in kept]).reshape(-1, 4)
    masks = np.array([t.mask for t in kept]).reshape(-1, h, w)
    return RegionSample(rgb, boxes, masks)


def to_tensor_image(rgb: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(rgb)).permute(2, 0, 1).float() / 255.0


def _batch(samples: list[RegionSample], flips: np.ndarray):
    images, truths = [], []
    for s, flip in zip(samples, flips):
        img, boxes, masks = s.image, s.boxes.copy(), s.masks
        w = img.shape[1]
        if flip:
            img = img[:, ::-1]
            masks = masks[:, :, ::-1]
            boxes = np.stack([w - boxes[:, 2], boxes[:, 1], w - boxes[:, 0], boxes[:, 3]], axis=1).reshape(-1, 4)
        images.append(to_tensor_image(img))
        truths.append({
            "boxes": torch.from_numpy(boxes).float(),
            "labels": torch.zeros(len(boxes), dtype=torch.long),
            "masks": torch.from_numpy(masks.copy()).float(),   # copy: flipped views have negative strides
        })
    return torch.stack(images), truths


def train_region(samples: list[RegionSample], config: RegionConfig | None = None,
                 train: RegionTrainConfig | None = None, model: RegionProposalNet | None = None):
    """Adam with per-epoch exponential decay; the backbone is frozen for the first phase.

    Returns ``(model, curve)`` where ``curve`` lists the total loss at every step.
    """
    cfg = config or RegionConfig()
    tc = train or RegionTrainConfig()
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    model = model or RegionProposalNet(cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=tc.lr_decay)
    freeze_epochs = int(math.floor(tc.freeze_fraction * tc.epochs))
    n = len(samples)
    curve: list[float] = []
    step = 0
    for epoch in range(tc.epochs):
        frozen = epoch < freeze_epochs
        for p in model.backbone_parameters():
            p.requires_grad_(not frozen)
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5 if tc.hflip else np.zeros(n, dtype=bool)
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            images, truths = _batch([samples[i] for i in idx], flips[idx])
            out = model(images)
            losses = region_losses(out, truths, model.anchors, cfg.box_loss, cfg.pos_iou, cfg.neg_iou,
                                   cfg.negative_ratio, cfg.loss_weights)
            total = losses.total
            if not torch.isfinite(total):
                raise DivergenceError(f"region loss became {total.item()} at step {step} (epoch {epoch})")
            opt.zero_grad()
            total.backward()
            opt.step()
            curve.append(float(total.detach()))
            step += 1
            if tc.max_steps and step >= tc.max_steps:
                break
        if tc.max_steps and step >= tc.max_steps:
            break
        sched.step()
        log.info("region epoch %d: mean loss %.4f", epoch, float(np.mean(curve[-max(1, n // tc.batch_size):])))
    model.eval()
    model.trained = True
    return model, curve


@torch.no_grad()
def detect(model: RegionProposalNet, rgb: np.ndarray, score_threshold: float = 0.5, nms_iou: float = 0.5,
           pre_nms_top: int = 100) -> list[InstanceDetection]:
    """Full inference on one H x W x 3 uint8 image: decode, NMS, assemble masks."""
    model.eval()
    out = model(to_tensor_image(rgb).unsqueeze(0))
    scores = torch.sigmoid(out["confidence"][0])
    keep = torch.nonzero(scores > score_threshold).squeeze(1)
    if keep.numel() > pre_nms_top:
        keep = keep[torch.argsort(scores[keep], descending=True, stable=True)[:pre_nms_top]]
    boxes = decode(out["box"][0][keep], model.anchors[keep])
    classes = out["class_logits"][0][keep].argmax(-1)
    coeff = out["coefficients"][0][keep]
    dets = []
    for i in range(len(keep)):
        b = boxes[i].double().numpy()
        if b[0] < b[2] and b[1] < b[3]:
            dets.append(InstanceDetection(float(scores[keep[i]]), b, int(classes[i]), coeff[i].double().numpy()))
    h, w = rgb.shape[:2]
    dets = postprocess(dets, score_threshold, nms_iou, (h, w))
    return assemble_masks(out["protos"][0].double().numpy(), dets, (h, w))


def save_region(path, model: RegionProposalNet, train: RegionTrainConfig | None, extra: dict | None = None) -> None:
    manifest = {"kind": "region", "trained": train is not None, "config": model.config.to_dict(),
                "train": asdict(train) if train else None}
    manifest.update(extra or {})
    save_module(path, model, manifest)


def load_region(path) -> RegionProposalNet:
    tensors, manifest = read_manifest_checked(path, "region")
    model = RegionProposalNet(RegionConfig.from_dict(manifest["config"]))
    load_state(model, tensors)
    model.eval()
    model.trained = True
    return model
