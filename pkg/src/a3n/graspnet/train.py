"""Grasp losses, training and end-to-end prediction."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import DivergenceError, ValidationError
from ..geometry import CameraIntrinsics, partition_masked
from ..grasp import GraspPose
from ..weights import load_state, read_manifest_checked, save_module
from .data import MIN_VALID_POINTS, GraspSample, mirror_sample, prepare
from .model import CM, GraspConfig, GraspNet, forward_parts, orthogonality_penalty, pad_batch, to_grasp

log = logging.getLogger(__name__)

BOX_WEIGHT = 1.0
ORI_WEIGHT = 2.0


class GraspLosses(NamedTuple):
    box: float | torch.Tensor
    ori: float | torch.Tensor
    total: float | torch.Tensor


def smooth_l1(x):
    """0.5 x^2 below 1, |x| - 0.5 above; works on floats, arrays and tensors."""
    if isinstance(x, torch.Tensor):
        return F.smooth_l1_loss(x, torch.zeros_like(x), reduction="none", beta=1.0)
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


def grasp_losses(pred: GraspPose, truth: GraspPose) -> GraspLosses:
    """Loss between two poses in the same frame: box terms in cm, angles in rad."""
    box_res = np.concatenate([(pred.centre - truth.centre) / CM, (pred.box_extents - truth.box_extents) / CM])
    ori_res = np.array([pred.pitch - truth.pitch, pred.yaw - truth.yaw])
    l_box = float(np.mean(smooth_l1(box_res)))
    l_ori = float(np.mean(smooth_l1(ori_res)))
    return GraspLosses(l_box, l_ori, BOX_WEIGHT * l_box + ORI_WEIGHT * l_ori)


def truth_tensors(samples: list[GraspSample], dtype=torch.float32) -> dict:
    return {
        "offsets_cm": torch.as_tensor(np.stack([(s.truth.centre - s.centroid) / CM for s in samples]), dtype=dtype),
        "extents_cm": torch.as_tensor(np.stack([s.truth.box_extents / CM for s in samples]), dtype=dtype),
        "angles": torch.as_tensor([[s.truth.pitch, s.truth.yaw] for s in samples], dtype=dtype),
    }


def batched_losses(out: dict, truth: dict) -> GraspLosses:
    box_res = torch.cat([out["offsets_cm"] - truth["offsets_cm"],
                         torch.exp(out["log_extents"]) - truth["extents_cm"]], dim=1)
    l_box = smooth_l1(box_res).mean()
    l_ori = smooth_l1(out["angles"] - truth["angles"]).mean()
    return GraspLosses(l_box, l_ori, BOX_WEIGHT * l_box + ORI_WEIGHT * l_ori)


def batch_inputs(samples: list[GraspSample], scale: float, dtype=torch.float32):
    obj = pad_batch([s.obj * scale for s in samples], dtype)
    ctx = pad_batch([s.ctx * scale if len(s.ctx) else np.zeros((1, 3)) for s in samples], dtype)
    return obj, ctx


@dataclass
class GraspTrainConfig:
    epochs: int = 24
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay: float = 0.95
    max_steps: int = 0
    seed: int = 0
    mirror: bool = True        # random x/y reflections of each training sample
    mask_jitter: int = 1       # grow/shrink training masks by up to this many pixels


def centre_rmse_cm(model: GraspNet, samples: list[GraspSample], batch_size: int = 64) -> float:
    if not samples:
        return float("nan")
    sq = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out = model(*batch_inputs(chunk, model.config.input_scale))
            for j, s in enumerate(chunk):
                g = to_grasp(out, j, s.centroid)
                sq.append(float(np.sum((g.centre - s.truth.centre) ** 2)))
    return math.sqrt(float(np.mean(sq))) / CM


def train_grasp(samples: list[GraspSample], config: GraspConfig | None = None,
                train: GraspTrainConfig | None = None, val: list[GraspSample] | None = None):
    """Returns ``(model, curve, val_log)``: per-step loss and per-epoch validation centre RMSE (cm)."""
    cfg = config or GraspConfig()
    tc = train or GraspTrainConfig()
    if not samples:
        raise ValidationError("no grasp training samples")
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    model = GraspNet(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=tc.lr_decay)
    curve: list[float] = []
    val_log: list[float] = []
    step = 0
    for epoch in range(tc.epochs):
        model.train()
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), tc.batch_size):
            chunk = [samples[i] for i in order[start:start + tc.batch_size]]
            if tc.mirror:
                flips = rng.random((len(chunk), 2)) < 0.5
                chunk = [mirror_sample(s, fx, fy) for s, (fx, fy) in zip(chunk, flips)]
            out = model(*batch_inputs(chunk, cfg.input_scale))
            loss = batched_losses(out, truth_tensors(chunk)).total
            if cfg.ortho_weight:
                loss = loss + cfg.ortho_weight * sum(orthogonality_penalty(t) for t in out["feature_transforms"])
            if not torch.isfinite(loss):
                raise DivergenceError(f"grasp loss became {loss.item()} at step {step} (epoch {epoch})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
            step += 1
            if tc.max_steps and step >= tc.max_steps:
                break
        if tc.max_steps and step >= tc.max_steps:
            break
        sched.step()
        model.eval()
        if val:
            val_log.append(centre_rmse_cm(model, val))
            log.info("grasp epoch %d: val centre RMSE %.3f cm", epoch, val_log[-1])
    model.eval()
    model.trained = True
    return model, curve, val_log


def predict(detections, depth: np.ndarray, intr: CameraIntrinsics, model: GraspNet, seed: int = 0,
            diagnostics: list | None = None) -> list[GraspPose]:
    """One grasp per detection with enough valid depth, in the camera frame.

    Skipped detections are reported as ``(index, reason)`` in ``diagnostics``.
    """
    out = []
    for i, det in enumerate(detections):
        mask = det.binary_mask() if hasattr(det, "binary_mask") else np.asarray(det) > 0
        valid = int(np.count_nonzero(mask & (depth > 0)))
        if valid < MIN_VALID_POINTS:
            if diagnostics is not None:
                diagnostics.append((i, f"only {valid} valid depth pixels"))
            continue
        parts = partition_masked(depth, mask, intr, model.config.context_radius)
        obj, ctx, centroid = prepare(parts, model.config, seed + i)
        score = float(getattr(det, "score", 1.0))
        out.append(forward_parts(model, obj, ctx, centroid, score))
    return out


def save_grasp(path, model: GraspNet, train: GraspTrainConfig | None, extra: dict | None = None) -> None:
    manifest = {"kind": "grasp", "trained": train is not None, "config": model.config.to_dict(),
                "train": asdict(train) if train else None}
    manifest.update(extra or {})
    save_module(path, model, manifest)


def load_grasp(path) -> GraspNet:
    tensors, manifest = read_manifest_checked(path, "grasp")
    model = GraspNet(GraspConfig.from_dict(manifest["config"]))
    load_state(model, tensors)
    model.eval()
    model.trained = True
    return model
