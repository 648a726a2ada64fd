"""On-disk synthetic datasets.

Layout::

    DIR/manifest.json                 splits, generation config, intrinsics
    DIR/scenes/<id>/spec.json         SceneSpec
    DIR/frames/<id>/<k>.rgb           u8 raster, H x W x 3
    DIR/frames/<id>/<k>.depth         f32 raster, metres (0 = invalid)
    DIR/frames/<id>/<k>.inst          u16 raster, fruit id (0 = none)
    DIR/frames/<id>/<k>.json          camera pose, intrinsics, distance
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ValidationError
from ..formats import read_raster, write_raster
from ..geometry import CameraIntrinsics, Pose
from .render import NoiseModel, RenderedFrame, camera_at, render
from .scene import SceneConfig, SceneSpec, generate_scene

MANIFEST_VERSION = 1


@dataclass
class DatasetConfig:
    image_size: int = 160
    hfov_deg: float = 60.0
    frames_per_scene: int = 2
    near_distance: float = 0.4
    near_jitter: float = 0.05
    far_range: tuple[float, float] = (0.4, 1.2)
    camera_xy_jitter: float = 0.15
    val_fraction: float = 0.0
    test_fraction: float = 0.2
    test_distance: float = 0.4
    noise: bool = True
    sigma0: float = 0.0025
    dropout_max: float = 0.5
    scene: SceneConfig = field(default_factory=SceneConfig)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.image_size, self.image_size, self.hfov_deg)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(enabled=self.noise, sigma0=self.sigma0, dropout_max=self.dropout_max)

    def validate(self) -> None:
        if self.frames_per_scene < 1:
            raise ConfigError("frames_per_scene must be >= 1")
        if not (0 <= self.val_fraction and 0 <= self.test_fraction and self.val_fraction + self.test_fraction <= 1):
            raise ConfigError("split fractions must be non-negative and sum to at most 1")
        self.scene.validate()


@dataclass
class FrameRecord:
    scene_id: str
    index: int
    distance: float
    split: str


def split_counts(n: int, cfg: DatasetConfig) -> tuple[int, int, int]:
    n_test = int(round(n * cfg.test_fraction))
    n_val = int(round(n * cfg.val_fraction))
    return n - n_val - n_test, n_val, n_test


def scene_id(i: int) -> str:
    return f"{i:05d}"


def frame_plan(cfg: DatasetConfig, split: str, rng: np.random.Generator) -> list[tuple[float, tuple[float, float]]]:
    """(distance, camera xy) for each frame of one scene."""
    j = cfg.camera_xy_jitter
    if split == "test":
        return [(cfg.test_distance, tuple(rng.uniform(-j, j, 2)))]
    plan = []
    for k in range(cfg.frames_per_scene):
        if k == 0:
            d = cfg.near_distance + rng.uniform(-cfg.near_jitter, cfg.near_jitter)
        else:
            d = rng.uniform(*cfg.far_range)
        plan.append((float(d), tuple(rng.uniform(-j, j, 2))))
    return plan


def generate_dataset(out_dir, n_scenes: int, seed: int, cfg: DatasetConfig | None = None) -> dict:
    cfg = cfg or DatasetConfig()
    cfg.validate()
    if n_scenes < 1:
        raise ConfigError("need at least one scene")
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    intr = cfg.intrinsics()
    noise = cfg.noise_model()
    n_train, n_val, _ = split_counts(n_scenes, cfg)
    splits = {"train": [], "val": [], "test": []}
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes * 2).reshape(n_scenes, 2)
    for i in range(n_scenes):
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        sid = scene_id(i)
        splits[split].append(sid)
        scene = generate_scene(cfg.scene, seed=int(seeds[i, 0]))
        sdir = out / "scenes" / sid
        sdir.mkdir(exist_ok=True)
        (sdir / "spec.json").write_text(scene.dumps())
        fdir = out / "frames" / sid
        fdir.mkdir(exist_ok=True)
        rng = np.random.default_rng(int(seeds[i, 1]))
        for k, (dist, xy) in enumerate(frame_plan(cfg, split, rng)):
            pose = camera_at(xy, dist)
            frame = render(scene, pose, intr, noise, seed=int(rng.integers(2**31)))
            write_frame(fdir, k, frame, dist)
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "n_scenes": n_scenes,
        "splits": splits,
        "intrinsics": intr.to_dict(),
        "config": _config_dict(cfg),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _config_dict(cfg: DatasetConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def write_frame(fdir: Path, k: int, frame: RenderedFrame, distance: float) -> None:
    write_raster(fdir / f"{k}.rgb", frame.rgb, "rgb")
    write_raster(fdir / f"{k}.depth", frame.depth.astype(np.float32), "depth")
    write_raster(fdir / f"{k}.inst", frame.instance_id, "inst")
    meta = {"camera_pose": frame.camera_pose.to_dict(), "intrinsics": frame.intrinsics.to_dict(),
            "distance": distance}
    (fdir / f"{k}.json").write_text(json.dumps(meta, indent=1))


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise ValidationError(f"no manifest.json in {data_dir}")
    return json.loads(path.read_text())


def load_scene(data_dir, sid: str) -> SceneSpec:
    return SceneSpec.from_json(json.loads((Path(data_dir) / "scenes" / sid / "spec.json").read_text()))


def load_frame(data_dir, sid: str, k: int) -> tuple[RenderedFrame, float]:
    fdir = Path(data_dir) / "frames" / sid
    meta = json.loads((fdir / f"{k}.json").read_text())
    frame = RenderedFrame(
        rgb=read_raster(fdir / f"{k}.rgb"),
        depth=read_raster(fdir / f"{k}.depth").astype(np.float64),
        instance_id=read_raster(fdir / f"{k}.inst"),
        camera_pose=Pose.from_dict(meta["camera_pose"]),
        intrinsics=CameraIntrinsics.from_dict(meta["intrinsics"]),
    )
    return frame, float(meta["distance"])


def frame_records(data_dir, split: str) -> list[FrameRecord]:
    manifest = load_manifest(data_dir)
    if split not in manifest["splits"]:
        raise ValidationError(f"unknown split {split!r}")
    out = []
    for sid in manifest["splits"][split]:
        fdir = Path(data_dir) / "frames" / sid
        for meta in sorted(fdir.glob("*.json"), key=lambda p: int(p.stem)):
            d = json.loads(meta.read_text())["distance"]
            out.append(FrameRecord(sid, int(meta.stem), float(d), split))
    return out


@dataclass
class InstanceTruth:
    fruit_id: int
    box: np.ndarray     # xyxy, pixel-edge convention
    mask: np.ndarray    # H x W bool
    pixels: int


def instance_truths(instance_id: np.ndarray, min_pixels: int = 40) -> tuple[list[InstanceTruth], list[InstanceTruth]]:
    """Visible fruit instances split into (kept, ignored-for-being-too-small)."""
    kept, ignored = [], []
    for fid in np.unique(instance_id):
        if fid == 0:
            continue
        m = instance_id == fid
        v, u = np.nonzero(m)
        t = InstanceTruth(int(fid), np.array([u.min(), v.min(), u.max() + 1, v.max() + 1], dtype=np.float64),
                          m, int(m.sum()))
        (kept if t.pixels >= min_pixels else ignored).append(t)
    return kept, ignored
