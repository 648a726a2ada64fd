"""Key-value run configuration and run manifests.

One setting per line, ``section.field = value``; ``#`` starts a comment.
Values are JSON (numbers, ``true``/``false``, quoted strings, lists) or a
bare comma-separated list of numbers. Sections::

    seed                  top-level integer seed
    data.*                DatasetConfig (image_size, frames_per_scene, ...)
    scene.*               SceneConfig (max_fruits, occlusion_ratio, ...)
    region.*              RegionConfig (k, proto_source, box_loss, ...)
    region_train.*        RegionTrainConfig (epochs, batch_size, lr, ...)
    grasp.*               GraspConfig (max_points, use_context, ...)
    grasp_train.*         GraspTrainConfig (epochs, batch_size, lr, ...)
    eval.*                EvalConfig (score_threshold, scenes, ...)
"""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError
from ..graspnet.model import GraspConfig
from ..graspnet.train import GraspTrainConfig
from ..regionproposal.model import RegionConfig
from ..regionproposal.train import RegionTrainConfig
from ..scenesim.dataset import DatasetConfig

VERSION = "0.1.0"


@dataclass
class EvalConfig:
    score_threshold: float = 0.5
    iou_threshold: float = 0.5
    min_pixels: int = 40
    fractions: tuple = (0.1, 0.2, 0.4)
    corruption_distances: tuple = (0.4, 0.8)
    corruption_repeats: int = 3
    distances: tuple = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2)
    scenes: int = 100                  # scenes taken from the test split by sweeps
    global_distance: float = 1.0
    local_standoff: float = 0.4
    oracle: bool = False
    plot: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    data: DatasetConfig = field(default_factory=DatasetConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    region_train: RegionTrainConfig = field(default_factory=RegionTrainConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    grasp_train: GraspTrainConfig = field(default_factory=GraspTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        try:
            return [json.loads(p) for p in text.split(",")]
        except json.JSONDecodeError:
            pass
    return text


def _coerce(value, current):
    if isinstance(current, tuple):
        if not isinstance(value, list):
            value = [value]
        return tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    return value


def _assign(obj, name: str, value, key: str) -> None:
    names = {f.name for f in fields(obj)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, name)
    if is_dataclass(current):
        raise ConfigError(f"{key!r} is a section, not a value")
    try:
        setattr(obj, name, _coerce(value, current))
    except ConfigError as e:
        raise ConfigError(f"{key}: {e}") from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        value = parse_value(value)
        if key == "seed":
            _assign(cfg, "seed", value, key)
            continue
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if section == "scene":
            target = cfg.data.scene
        elif section in {f.name for f in fields(cfg)} and section != "seed":
            target = getattr(cfg, section)
        else:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        _assign(target, name, value, key)
    try:
        cfg.data.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    """Render every field as text that ``parse_config`` reads back."""
    lines = [f"seed = {cfg.seed}"]
    for section in ("data", "scene", "region", "region_train", "grasp", "grasp_train", "eval"):
        obj = cfg.data.scene if section == "scene" else getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if is_dataclass(v):
                continue
            lines.append(f"{section}.{f.name} = {json.dumps(list(v) if isinstance(v, tuple) else v)}")
    return "\n".join(lines) + "\n"


def versions() -> dict:
    return {"a3n": VERSION, "python": platform.python_version(), "numpy": np.__version__, "torch": torch.__version__}


def write_run_manifest(path, cfg: RunConfig, command: list[str], outputs: list[str]) -> dict:
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": versions(),
        "outputs": sorted(outputs),
        "config": cfg.to_dict(),
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
