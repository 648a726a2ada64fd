"""Experiment harnesses: input corruption, viewing distance, scanning strategy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ValidationError
from ..geometry import CameraIntrinsics, PointCloud, corrupt_missing, corrupt_outliers
from ..graspnet.data import GraspSample, prepare_clouds, samples_from_frame
from ..graspnet.model import GraspNet, to_grasp
from ..graspnet.train import batch_inputs
from ..scenesim.render import NoiseModel, camera_at, render
from ..scenesim.scan import Pipeline, ScanPlan, STRATEGIES, attribute, perceive, run_scan
from ..scenesim.scene import SceneConfig, SceneSpec, ground_truth_grasp
from .metrics import GraspMetrics, grasp_rmse, pool

KINDS = ("missing", "outlier")
DEFAULT_FRACTIONS = (0.1, 0.2, 0.4)
DEFAULT_DISTANCES = tuple(round(0.4 + 0.1 * i, 1) for i in range(9))


@dataclass
class SweepCell:
    value: float
    metrics: GraspMetrics

    @property
    def n(self) -> int:
        return self.metrics.n


@dataclass
class SweepReport:
    axis: str                  # distance | missing_fraction | outlier_fraction
    cells: list[SweepCell]
    distance: float | None = None

    def __post_init__(self):
        values = [c.value for c in self.cells]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValidationError(f"sweep axis values must increase strictly: {values}")

    def series(self, field: str = "rmse_centre") -> list[float]:
        return [getattr(c.metrics, field) for c in self.cells]


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def render_samples(scenes: list[SceneSpec], distance: float, intr: CameraIntrinsics, noise: NoiseModel,
                   model_cfg, scene_cfg: SceneConfig | None = None, seed: int = 0,
                   min_pixels: int = 40) -> list[GraspSample]:
    """Grasp samples from true masks, each scene viewed head-on from ``distance``."""
    scene_cfg = scene_cfg or SceneConfig()
    out = []
    for i, scene in enumerate(scenes):
        frame = render(scene, camera_at((0.0, 0.0), distance), intr, noise, _seed(seed, i, round(distance * 1000)))
        rng = np.random.default_rng(_seed(seed, i, 7))
        out += samples_from_frame(frame, scene, scene_cfg, model_cfg, min_pixels, rng, distance, (i,))
    return out


@torch.no_grad()
def evaluate_samples(model: GraspNet, samples: list[GraspSample], batch_size: int = 64) -> GraspMetrics:
    preds, truths = {}, {}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        out = model(*batch_inputs(chunk, model.config.input_scale))
        for j, s in enumerate(chunk):
            preds[s.key] = to_grasp(out, j, s.centroid)
            truths[s.key] = s.truth
    return grasp_rmse(preds, truths)


def corrupt_sample(s: GraspSample, kind: str, fraction: float, seed: int, cfg) -> GraspSample:
    """Re-derive a sample after corrupting both its object and context sets.

    Corruption acts on absolute coordinates, so the object centroid moves with it.
    """
    obj = PointCloud(s.obj + s.centroid)
    ctx = PointCloud(s.ctx + s.centroid)
    if kind == "missing":
        obj = corrupt_missing(obj, fraction, _seed(seed, 1))
        ctx = corrupt_missing(ctx, fraction, _seed(seed, 2)) if len(ctx) else ctx
    elif kind == "outlier":
        obj = corrupt_outliers(obj, fraction, seed=_seed(seed, 1))
        ctx = corrupt_outliers(ctx, fraction, seed=_seed(seed, 2)) if len(ctx) else ctx
    else:
        raise ValidationError(f"unknown corruption kind {kind!r}")
    o, c, centroid = prepare_clouds(obj, ctx, cfg, _seed(seed, 3))
    return GraspSample(o, c, centroid, s.truth, s.distance, s.key)


def corruption_sweep(model: GraspNet, samples_by_distance: dict[float, list[GraspSample]],
                     fractions=DEFAULT_FRACTIONS, kinds=KINDS, repeats: int = 3, seed: int = 0
                     ) -> list[SweepReport]:
    """One report per (kind, distance); each starts with the uncorrupted 0 cell.

    Residuals are pooled over ``repeats`` corruption seeds. The same seed is
    used at every fraction, so corrupted sets are nested.
    """
    reports = []
    for kind in kinds:
        for distance in sorted(samples_by_distance):
            samples = samples_by_distance[distance]
            cells = [SweepCell(0.0, evaluate_samples(model, samples))]
            for f in sorted(fractions):
                runs = []
                for r in range(repeats):
                    bad = [corrupt_sample(s, kind, f, _seed(seed, r, i), model.config) for i, s in enumerate(samples)]
                    runs.append(evaluate_samples(model, bad))
                cells.append(SweepCell(float(f), pool(runs)))
            reports.append(SweepReport(f"{kind}_fraction", cells, distance))
    return reports


def frame_grasp_metrics(frame, scene: SceneSpec, pipeline: Pipeline, scene_cfg, key, seed: int = 0) -> GraspMetrics:
    obs = attribute(perceive(frame, pipeline, seed), frame, pipeline.min_pixels)
    preds = {(key, i): o.grasp for i, o in obs.items() if o.grasp is not None}
    truths = {k: ground_truth_grasp(scene, k[1], scene_cfg) for k in preds}
    return grasp_rmse(preds, truths)


def distance_sweep(pipeline: Pipeline, scenes: list[SceneSpec], intr: CameraIntrinsics,
                   distances=DEFAULT_DISTANCES, noise: NoiseModel | None = None,
                   scene_cfg: SceneConfig | None = None, seed: int = 0) -> SweepReport:
    """Full pipeline on every scene at every distance; grasps scored on matched fruits."""
    pipeline.check()
    noise = noise if noise is not None else NoiseModel()
    cells = []
    for d in sorted(distances):
        per_scene = []
        for i, scene in enumerate(scenes):
            frame = render(scene, camera_at((0.0, 0.0), d), intr, noise, _seed(seed, i, round(d * 1000)))
            per_scene.append(frame_grasp_metrics(frame, scene, pipeline, scene_cfg, i, seed))
        cells.append(SweepCell(float(d), pool(per_scene)))
    return SweepReport("distance", cells)


@dataclass
class StrategyRow:
    strategy: str
    scenes: int
    fruits: int
    num_obs: int
    metrics: GraspMetrics
    success_rate: float


def strategy_compare(pipeline: Pipeline, scenes: list[SceneSpec], intr: CameraIntrinsics,
                     noise: NoiseModel | None = None, scene_cfg: SceneConfig | None = None, seed: int = 0,
                     global_distance: float = 1.0, local_standoff: float = 0.4) -> list[StrategyRow]:
    rows = []
    for strategy in STRATEGIES:
        plan = ScanPlan(strategy, global_distance, local_standoff)
        reports = [run_scan(s, plan, pipeline, intr, noise, _seed(seed, i), scene_cfg) for i, s in enumerate(scenes)]
        centre = tuple(f.centre_error_cm for r in reports for f in r.fruits if f.detected)
        angular = tuple(f.angular_error_deg for r in reports for f in r.fruits if f.detected)
        rms = (lambda v: float(np.sqrt(np.mean(np.square(v)))) if v else float("nan"))
        tried = [f for r in reports for f in r.fruits if f.detected]
        rows.append(StrategyRow(strategy, len(scenes), sum(len(r.fruits) for r in reports),
                                sum(r.num_obs for r in reports), GraspMetrics(rms(centre), rms(angular), centre, angular),
                                sum(f.success for f in tried) / len(tried) if tried else float("nan")))
    return rows
