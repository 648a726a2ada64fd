"""Synthetic orchard scenes: spherical fruits among branch and leaf occluders.

World frame: the canopy is centred on the origin and spread over the x-y
plane; cameras sit at negative z looking down +z.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from ..grasp import GraspPose, angles_from_vector

MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass
class SceneConfig:
    min_fruits: int = 3
    max_fruits: int = 7
    radius_range: tuple[float, float] = (0.03, 0.06)
    canopy_half_extent: tuple[float, float] = (0.28, 0.28)
    canopy_depth: tuple[float, float] = (-0.06, 0.06)
    min_gap: float = 0.005
    occlusion_ratio: float = 0.3
    leaves_per_fruit: float = 3.0
    max_branches: int = 4
    workspace_edge: float = 2.0
    approach_reach: float = 0.15
    approach_gain: float = 0.8

    def validate(self) -> None:
        if self.min_fruits < 1 or self.max_fruits < self.min_fruits:
            raise ConfigError("fruit count range must satisfy 1 <= min <= max")
        lo, hi = self.radius_range
        if not (0.03 <= lo <= hi <= 0.06):
            raise ConfigError("fruit radii must lie in [0.03, 0.06] m")
        if not 0.0 <= self.occlusion_ratio <= 1.0:
            raise ConfigError("occlusion_ratio must be in [0, 1]")


@dataclass
class Fruit:
    centre: np.ndarray
    radius: float
    grasp: GraspPose


@dataclass
class Branch:
    p0: np.ndarray
    p1: np.ndarray
    radius: float


@dataclass
class Leaf:
    centre: np.ndarray
    normal: np.ndarray
    radius: float


@dataclass
class SceneSpec:
    fruits: list[Fruit]
    branches: list[Branch] = field(default_factory=list)
    leaves: list[Leaf] = field(default_factory=list)
    workspace_centre: np.ndarray = field(default_factory=lambda: np.zeros(3))
    workspace_edge: float = 2.0
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "workspace": {"centre": [float(c) for c in self.workspace_centre], "edge": self.workspace_edge},
            "fruits": [
                {"id": i + 1, "centre": f.centre.tolist(), "radius": f.radius, "grasp": f.grasp.to_json()}
                for i, f in enumerate(self.fruits)
            ],
            "branches": [{"p0": b.p0.tolist(), "p1": b.p1.tolist(), "radius": b.radius} for b in self.branches],
            "leaves": [{"centre": l.centre.tolist(), "normal": l.normal.tolist(), "radius": l.radius}
                       for l in self.leaves],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        fruits = [Fruit(np.array(f["centre"]), float(f["radius"]), GraspPose.from_json(f["grasp"]))
                  for f in d["fruits"]]
        branches = [Branch(np.array(b["p0"]), np.array(b["p1"]), float(b["radius"])) for b in d["branches"]]
        leaves = [Leaf(np.array(l["centre"]), np.array(l["normal"]), float(l["radius"])) for l in d["leaves"]]
        ws = d.get("workspace", {})
        return cls(fruits, branches, leaves, np.array(ws.get("centre", [0, 0, 0]), dtype=float),
                   float(ws.get("edge", 2.0)), int(d.get("seed", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _segment_closest(p0, p1, q):
    d = p1 - p0
    t = np.clip(np.dot(q - p0, d) / np.dot(d, d), 0.0, 1.0)
    return p0 + t * d


def _disc_closest(centre, normal, radius, q):
    v = q - centre
    in_plane = v - np.dot(v, normal) * normal
    n = np.linalg.norm(in_plane)
    if n > radius:
        in_plane *= radius / n
    return centre + in_plane


def obstacle_points(scene: SceneSpec, index: int) -> list[np.ndarray]:
    """Closest point of every other scene element to fruit ``index``'s centre."""
    c = scene.fruits[index].centre
    pts = []
    for j, f in enumerate(scene.fruits):
        if j != index:
            v = c - f.centre
            pts.append(f.centre + v / np.linalg.norm(v) * f.radius)
    pts += [_segment_closest(b.p0, b.p1, c) for b in scene.branches]
    pts += [_disc_closest(l.centre, l.normal, l.radius, c) for l in scene.leaves]
    return pts


def approach_direction(centre, radius, obstacles, reach: float = 0.15, gain: float = 0.8) -> np.ndarray:
    """Least-occluded approach: nominal toward -z, pushed away from nearby obstacles.

    Each obstacle whose surface gap ``s`` to the fruit is below ``reach``
    contributes a unit push away from itself weighted by ``(1 - s/reach)**2``.
    """
    a = np.array([0.0, 0.0, -1.0])
    for q in obstacles:
        v = centre - q
        dist = np.linalg.norm(v)
        gap = dist - radius
        if dist < 1e-9 or gap >= reach:
            continue
        w = (1.0 - max(gap, 0.0) / reach) ** 2
        a = a + gain * w * v / dist
    n = np.linalg.norm(a)
    return a / n if n > 1e-9 else np.array([0.0, 0.0, -1.0])


def ground_truth_grasp(scene: SceneSpec, index: int, cfg: SceneConfig | None = None) -> GraspPose:
    cfg = cfg or SceneConfig()
    f = scene.fruits[index]
    a = approach_direction(f.centre, f.radius, obstacle_points(scene, index), cfg.approach_reach, cfg.approach_gain)
    pitch, yaw = angles_from_vector(a)
    return GraspPose(f.centre.copy(), pitch, yaw, np.full(3, 2 * f.radius))


def _random_unit_facing(rng, max_tilt: float) -> np.ndarray:
    """Unit normal within ``max_tilt`` radians of -z."""
    tilt = rng.uniform(0.0, max_tilt)
    phi = rng.uniform(0.0, 2 * math.pi)
    return np.array([math.sin(tilt) * math.cos(phi), math.sin(tilt) * math.sin(phi), -math.cos(tilt)])


def generate_scene(config: SceneConfig | None = None, seed: int = 0, n_fruits: int | None = None) -> SceneSpec:
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    if n_fruits is None:
        n_fruits = int(rng.integers(cfg.min_fruits, cfg.max_fruits + 1))
    if n_fruits < 1:
        raise ConfigError("at least one fruit is required")
    hx, hy = cfg.canopy_half_extent
    z0, z1 = cfg.canopy_depth
    half_ws = cfg.workspace_edge / 2

    centres: list[np.ndarray] = []
    radii: list[float] = []
    attempts = 0
    while len(centres) < n_fruits:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise ConfigError(f"could not place {n_fruits} fruits without overlap in {MAX_PLACEMENT_ATTEMPTS} attempts")
        r = float(rng.uniform(*cfg.radius_range))
        c = np.array([rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(z0, z1)])
        if np.any(np.abs(c) > half_ws):
            continue
        if all(np.linalg.norm(c - o) > r + ro + cfg.min_gap for o, ro in zip(centres, radii)):
            centres.append(c)
            radii.append(r)

    def clear_of_fruits(point_fn, margin):
        return all(np.linalg.norm(point_fn(c) - c) > r + margin for c, r in zip(centres, radii))

    branches: list[Branch] = []
    n_branches = int(round(cfg.occlusion_ratio * cfg.max_branches))
    tries = 0
    while len(branches) < n_branches and tries < MAX_PLACEMENT_ATTEMPTS:
        tries += 1
        rad = float(rng.uniform(0.008, 0.02))
        angle = rng.uniform(0, math.pi)
        mid = np.array([rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(z0 - 0.02, z1 + 0.04)])
        d = np.array([math.cos(angle), math.sin(angle), rng.uniform(-0.2, 0.2)])
        d /= np.linalg.norm(d)
        length = rng.uniform(0.3, 0.8)
        p0, p1 = mid - d * length / 2, mid + d * length / 2
        if clear_of_fruits(lambda c: _segment_closest(p0, p1, c), rad + 0.003):
            branches.append(Branch(p0, p1, rad))

    leaves: list[Leaf] = []
    n_leaves = int(round(cfg.occlusion_ratio * cfg.leaves_per_fruit * n_fruits))
    tries = 0
    while len(leaves) < n_leaves and tries < MAX_PLACEMENT_ATTEMPTS:
        tries += 1
        host = int(rng.integers(n_fruits))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        rad = float(rng.uniform(0.02, 0.045))
        centre = centres[host] + direction * (radii[host] + rng.uniform(0.01, 0.06))
        normal = _random_unit_facing(rng, 1.1)
        if clear_of_fruits(lambda c: _disc_closest(centre, normal, rad, c), 0.003):
            leaves.append(Leaf(centre, normal, rad))

    placeholder = [GraspPose(c, 0.0, 0.0, np.full(3, 2 * r)) for c, r in zip(centres, radii)]
    scene = SceneSpec([Fruit(c, r, g) for c, r, g in zip(centres, radii, placeholder)], branches, leaves,
                      np.zeros(3), cfg.workspace_edge, seed)
    for i, f in enumerate(scene.fruits):
        f.grasp = ground_truth_grasp(scene, i, cfg)
    return scene


def config_to_dict(cfg: SceneConfig) -> dict:
    return asdict(cfg)
