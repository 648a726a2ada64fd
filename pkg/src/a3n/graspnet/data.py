"""Turning masked depth into network-ready grasp samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInputError
from ..geometry import PartitionedPoints, PointCloud, center_align, partition_masked, voxel_downsample
from ..grasp import GraspPose, transform_grasp
from ..scenesim.dataset import frame_records, instance_truths, load_frame, load_scene
from ..scenesim.scene import SceneConfig, ground_truth_grasp
from .model import GraspConfig

MIN_VALID_POINTS = 10


@dataclass
class GraspSample:
    obj: np.ndarray         # centred metres
    ctx: np.ndarray         # same centring; may be empty
    centroid: np.ndarray    # camera frame
    truth: GraspPose        # camera frame
    distance: float = 0.0
    key: tuple = ()


def cap_points(points: np.ndarray, max_points: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) <= max_points:
        return points
    keep = np.sort(rng.choice(len(points), max_points, replace=False))
    return points[keep]


def downsample_parts(parts: PartitionedPoints, cfg: GraspConfig) -> tuple[PointCloud, PointCloud]:
    obj = voxel_downsample(parts.object_points, cfg.voxel_resolution)
    ctx = parts.context_points
    if len(ctx):
        ctx = voxel_downsample(ctx, cfg.context_voxel_resolution)
    return obj, ctx


def prepare_clouds(obj: PointCloud, ctx: PointCloud, cfg: GraspConfig, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre both sets on the object centroid and cap their size."""
    if obj.empty:
        raise EmptyInputError("object point set is empty")
    aligned, centroid = center_align(obj)
    rng = np.random.default_rng(seed)
    o = cap_points(aligned.points, cfg.max_points, rng)
    c = cap_points(ctx.points - centroid, cfg.max_points, rng) if len(ctx) else np.zeros((0, 3))
    return o, c, centroid


def prepare(parts: PartitionedPoints, cfg: GraspConfig, seed=0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    obj, ctx = downsample_parts(parts, cfg)
    return prepare_clouds(obj, ctx, cfg, seed)


def mirror_sample(s: GraspSample, flip_x: bool, flip_y: bool) -> GraspSample:
    """Reflect a sample across the camera's y-z and/or x-z plane.

    Reflecting x negates yaw and reflecting y negates pitch; the renderer and
    the approach rule are symmetric under both, so the result is a valid sample.
    """
    sign = np.array([-1.0 if flip_x else 1.0, -1.0 if flip_y else 1.0, 1.0])
    t = s.truth
    truth = GraspPose(t.centre * sign, -t.pitch if flip_y else t.pitch, -t.yaw if flip_x else t.yaw,
                      t.box_extents, score=t.score)
    ctx = s.ctx * sign if len(s.ctx) else s.ctx
    return GraspSample(s.obj * sign, ctx, s.centroid * sign, truth, s.distance, s.key)


def jitter_mask(mask: np.ndarray, rng: np.random.Generator, max_px: int = 1) -> np.ndarray:
    """Randomly grow or shrink a mask by up to ``max_px`` pixels (4-neighbourhood)."""
    steps = int(rng.integers(-max_px, max_px + 1))
    m = mask.copy()
    for _ in range(abs(steps)):
        shifted = [np.roll(m, s, axis=a) for a in (0, 1) for s in (-1, 1)]
        nxt = m.copy()
        for s in shifted:
            nxt = (nxt | s) if steps > 0 else (nxt & s)
        m = nxt
    return m if m.any() else mask


def samples_from_frame(frame, scene, scene_cfg: SceneConfig, cfg: GraspConfig, min_pixels: int,
                       rng: np.random.Generator, distance: float = 0.0, key=(), mask_jitter: int = 0
                       ) -> list[GraspSample]:
    kept, _ = instance_truths(frame.instance_id, min_pixels)
    world_to_cam = frame.camera_pose.inverse()
    out = []
    for t in kept:
        mask = jitter_mask(t.mask, rng, mask_jitter) if mask_jitter else t.mask
        if np.count_nonzero(mask & (frame.depth > 0)) < MIN_VALID_POINTS:
            continue
        parts = partition_masked(frame.depth, mask, frame.intrinsics, cfg.context_radius)
        o, c, centroid = prepare(parts, cfg, int(rng.integers(2**31)))
        gt = ground_truth_grasp(scene, t.fruit_id - 1, scene_cfg)
        truth = transform_grasp(gt, world_to_cam.rotation, world_to_cam.translation)
        out.append(GraspSample(o, c, centroid, truth, distance, key + (t.fruit_id,)))
    return out


def samples_from_dataset(data_dir, split: str, cfg: GraspConfig | None = None, min_pixels: int = 40,
                         seed: int = 0, mask_jitter: int = 0, max_distance: float | None = None
                         ) -> list[GraspSample]:
    """Ground-truth-mask grasp samples for every kept instance in a split."""
    from ..scenesim.dataset import load_manifest
    cfg = cfg or GraspConfig()
    manifest = load_manifest(data_dir)
    scene_cfg = SceneConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                               for k, v in manifest["config"]["scene"].items()})
    rng = np.random.default_rng(seed)
    out = []
    scenes = {}
    for rec in frame_records(data_dir, split):
        if max_distance is not None and rec.distance > max_distance:
            continue
        if rec.scene_id not in scenes:
            scenes = {rec.scene_id: load_scene(data_dir, rec.scene_id)}
        frame, dist = load_frame(data_dir, rec.scene_id, rec.index)
        out += samples_from_frame(frame, scenes[rec.scene_id], scene_cfg, cfg, min_pixels, rng, dist,
                                  (rec.scene_id, rec.index), mask_jitter)
    return out
