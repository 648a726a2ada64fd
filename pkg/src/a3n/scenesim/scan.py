"""Scanning strategies: one far view, close views only, or far-then-close."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, UntrainedWeightsError
from ..geometry import CameraIntrinsics, Pose, deproject, project
from ..grasp import GraspPose, approach_angle_deg, transform_grasp
from ..occupancy import OccupancyMap
from .dataset import instance_truths
from .render import NoiseModel, RenderedFrame, camera_at, render
from .scene import SceneConfig, SceneSpec, ground_truth_grasp

STRATEGIES = ("global", "local", "global_to_local")
SUCCESS_TOLERANCE_CM = 3.0


@dataclass(frozen=True)
class ScanPlan:
    strategy: str = "global_to_local"
    global_distance: float = 1.0
    local_standoff: float = 0.4
    global_xy: tuple[float, float] = (0.0, 0.0)
    map_resolution: float = 0.05

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.2 <= self.local_standoff <= 0.8:
            raise ConfigError(f"local standoff {self.local_standoff} m outside [0.2, 0.8]")
        if self.global_distance <= 0:
            raise ConfigError("global distance must be positive")

    @property
    def global_pose(self) -> Pose:
        return camera_at(self.global_xy, self.global_distance)


@dataclass
class Pipeline:
    """Trained perception models; ``oracle=True`` replaces the detector with true masks."""

    region: object | None = None
    grasp: object | None = None
    oracle: bool = False
    score_threshold: float = 0.5
    min_pixels: int = 40

    def check(self) -> None:
        if self.grasp is None or not getattr(self.grasp, "trained", False):
            raise UntrainedWeightsError("grasp network is missing or untrained")
        if not self.oracle and (self.region is None or not getattr(self.region, "trained", False)):
            raise UntrainedWeightsError("region network is missing or untrained")


@dataclass
class Observation:
    mask: np.ndarray
    box: np.ndarray
    score: float
    grasp: GraspPose | None      # world frame; None if skipped for lack of depth


def oracle_detections(frame: RenderedFrame, min_pixels: int = 40):
    from ..regionproposal.masks import InstanceDetection
    kept, _ = instance_truths(frame.instance_id, min_pixels)
    return [InstanceDetection(1.0, t.box, 0, None, t.mask.astype(np.float64)) for t in kept]


def perceive(frame: RenderedFrame, pipeline: Pipeline, seed: int = 0) -> list[Observation]:
    """Detect, then estimate one world-frame grasp per detection."""
    from ..graspnet.train import predict
    from ..regionproposal.train import detect
    if pipeline.oracle:
        dets = oracle_detections(frame, pipeline.min_pixels)
    else:
        dets = detect(pipeline.region, frame.rgb, pipeline.score_threshold)
    diag: list = []
    grasps = predict(dets, frame.depth, frame.intrinsics, pipeline.grasp, seed, diag)
    skipped = {i for i, _ in diag}
    pose = frame.camera_pose
    out, it = [], iter(grasps)
    for i, d in enumerate(dets):
        g = None if i in skipped else transform_grasp(next(it), pose.rotation, pose.translation)
        out.append(Observation(d.binary_mask(), d.box, d.score, g))
    return out


def _box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def attribute(obs: list[Observation], frame: RenderedFrame, min_pixels: int = 40) -> dict[int, Observation]:
    """Map fruit index -> its best observation (box IoU > 0.5 with the truth box, highest score)."""
    kept, _ = instance_truths(frame.instance_id, min_pixels)
    by_id: dict[int, Observation] = {}
    for o in sorted(obs, key=lambda o: -o.score):
        ids, counts = np.unique(frame.instance_id[o.mask], return_counts=True)
        counts = counts[ids > 0]
        ids = ids[ids > 0]
        if not len(ids):
            continue
        fid = int(ids[np.argmax(counts)])
        truth = next((t for t in kept if t.fruit_id == fid), None)
        if truth is None or fid - 1 in by_id or _box_iou(o.box, truth.box) <= 0.5:
            continue
        by_id[fid - 1] = o
    return by_id


@dataclass
class FruitResult:
    fruit: int
    detected: bool
    centre_error_cm: float = float("nan")
    angular_error_deg: float = float("nan")
    refined: bool = False

    @property
    def success(self) -> bool:
        return self.detected and is_success(self.centre_error_cm)


def is_success(centre_error_cm: float) -> bool:
    return bool(centre_error_cm <= SUCCESS_TOLERANCE_CM)


@dataclass
class ScanReport:
    strategy: str
    fruits: list[FruitResult]
    num_obs: int
    views: int
    occupied_voxels: int
    grasps: dict = field(default_factory=dict)   # fruit index -> world-frame GraspPose

    def _errors(self, attr):
        return np.array([getattr(f, attr) for f in self.fruits if f.detected and np.isfinite(getattr(f, attr))])

    @property
    def centre_rmse_cm(self) -> float:
        e = self._errors("centre_error_cm")
        return float(np.sqrt(np.mean(e ** 2))) if len(e) else float("nan")

    @property
    def angular_rmse_deg(self) -> float:
        e = self._errors("angular_error_deg")
        return float(np.sqrt(np.mean(e ** 2))) if len(e) else float("nan")

    @property
    def success_rate(self) -> float:
        tried = [f for f in self.fruits if f.detected]
        return sum(f.success for f in tried) / len(tried) if tried else float("nan")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "num_obs": self.num_obs,
            "views": self.views,
            "occupied_voxels": self.occupied_voxels,
            "fruits": [{"fruit": f.fruit, "detected": f.detected, "centre_error_cm": f.centre_error_cm,
                        "angular_error_deg": f.angular_error_deg, "refined": f.refined, "success": f.success}
                       for f in self.fruits],
        }


def _insert(occ: OccupancyMap, frame: RenderedFrame) -> None:
    cloud = deproject(frame.depth, frame.depth > 0, frame.intrinsics)
    occ.insert_scan(cloud, frame.camera_pose)


def _local_pose(target: np.ndarray, standoff: float) -> Pose:
    return Pose.from_translation([target[0], target[1], target[2] - standoff])


def _pick_target(obs: list[Observation], frame: RenderedFrame, target: np.ndarray) -> Observation | None:
    """The observation whose mask (else box) holds the projection of ``target``."""
    uv = project(frame.camera_pose.inverse().apply(target[None])[0], frame.intrinsics)
    if uv is None:
        return None
    u, v = uv
    cands = [o for o in obs if o.grasp is not None]
    for o in sorted(cands, key=lambda o: -o.score):
        if o.mask[int(v), int(u)]:
            return o
    inside = [o for o in cands if o.box[0] <= u <= o.box[2] and o.box[1] <= v <= o.box[3]]
    return max(inside, key=lambda o: o.score) if inside else None


def run_scan(scene: SceneSpec, plan: ScanPlan, pipeline: Pipeline, intr: CameraIntrinsics,
             noise: NoiseModel | None = None, seed: int = 0, scene_config: SceneConfig | None = None) -> ScanReport:
    """Simulate one scan of ``scene`` and score the resulting grasps against ground truth."""
    pipeline.check()
    noise = noise if noise is not None else NoiseModel()
    truths = [ground_truth_grasp(scene, i, scene_config) for i in range(len(scene.fruits))]
    occ = OccupancyMap(plan.map_resolution, edge=2.0 * max(1.0, plan.global_distance + 0.2))
    views = 0

    def look(pose: Pose):
        nonlocal views
        frame = render(scene, pose, intr, noise, seed=seed * 1009 + views)
        views += 1
        _insert(occ, frame)
        return frame, perceive(frame, pipeline, seed + views)

    if plan.strategy == "local":
        first_pose = _local_pose(np.array([*plan.global_xy, 0.0]), plan.local_standoff)
    else:
        first_pose = plan.global_pose
    frame, obs = look(first_pose)
    found = {i: o for i, o in attribute(obs, frame, pipeline.min_pixels).items() if o.grasp is not None}
    estimates = {i: o.grasp for i, o in found.items()}
    refined = set()
    if plan.strategy in ("local", "global_to_local"):
        for i in sorted(found):
            coarse = estimates[i]
            frame, obs = look(_local_pose(coarse.centre, plan.local_standoff))
            pick = _pick_target(obs, frame, coarse.centre)
            if pick is not None:
                estimates[i] = pick.grasp
                refined.add(i)

    results = []
    for i, truth in enumerate(truths):
        if i in estimates:
            g = estimates[i]
            err = float(np.linalg.norm(g.centre - truth.centre)) * 100.0
            results.append(FruitResult(i, True, err, approach_angle_deg(g, truth), i in refined))
        else:
            results.append(FruitResult(i, False))
    return ScanReport(plan.strategy, results, len(found), views, len(occ.occupied_voxels()), estimates)
