"""Per-pixel ray casting of a SceneSpec into RGB, depth and instance rasters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, Pose
from .scene import SceneSpec

FRUIT_RGB = np.array([0.78, 0.12, 0.08])
LEAF_RGB = np.array([0.22, 0.55, 0.16])
BRANCH_RGB = np.array([0.42, 0.27, 0.14])
LIGHT_DIR = np.array([0.3, -0.6, 0.74]) / np.linalg.norm([0.3, -0.6, 0.74])


@dataclass(frozen=True)
class NoiseModel:
    """Depth-camera imperfections.

    Depth noise is zero-mean Gaussian with ``sigma(d) = sigma0 * d**2``; pixels
    drop out with probability ``dropout_max * (1 - |cos(incidence)|)**2``.
    """

    enabled: bool = True
    sigma0: float = 0.0025
    dropout_max: float = 0.5
    rgb_sigma: float = 0.03

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls(enabled=False)


@dataclass
class RenderedFrame:
    rgb: np.ndarray          # H x W x 3 uint8
    depth: np.ndarray        # H x W float64 metres, 0 = invalid
    instance_id: np.ndarray  # H x W uint16, 0 = not a fruit
    camera_pose: Pose
    intrinsics: CameraIntrinsics
    hit: np.ndarray | None = None  # H x W bool, any surface hit before dropout


def camera_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit z, so ray parameter equals depth."""
    v, u = np.mgrid[0:intr.height, 0:intr.width].astype(np.float64)
    return np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)


def _sphere_hits(o, d, centre, radius):
    oc = o - centre
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * d @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4 * a * c
    t = np.full(len(d), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t[ok & (t0 > 1e-9)] = t0[ok & (t0 > 1e-9)]
    return t


def _cylinder_hits(o, d, p0, p1, radius):
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    w = o - p0
    d_perp = d - np.outer(d @ axis, axis)
    w_perp = w - (w @ axis) * axis
    a = np.einsum("ij,ij->i", d_perp, d_perp)
    b = 2.0 * d_perp @ w_perp
    c = w_perp @ w_perp - radius * radius
    disc = b * b - 4 * a * c
    t = np.full(len(d), np.inf)
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(a > 1e-12, a, 1.0)
    for root in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
        s = (w @ axis) + root * (d @ axis)
        good = ok & (root > 1e-9) & (s >= 0) & (s <= length) & (root < t)
        t[good] = root[good]
    return t


def _disc_hits(o, d, centre, normal, radius):
    denom = d @ normal
    t = np.full(len(d), np.inf)
    ok = np.abs(denom) > 1e-12
    root = np.where(ok, ((centre - o) @ normal) / np.where(ok, denom, 1.0), np.inf)
    p = o + root[:, None] * d
    inside = np.linalg.norm(p - centre, axis=1) <= radius
    good = ok & (root > 1e-9) & inside
    t[good] = root[good]
    return t


def _normals(kind, idx, points, scene: SceneSpec):
    n = np.zeros_like(points)
    for i, f in enumerate(scene.fruits):
        sel = (kind == 1) & (idx == i)
        n[sel] = (points[sel] - f.centre) / f.radius
    for i, b in enumerate(scene.branches):
        sel = (kind == 2) & (idx == i)
        axis = (b.p1 - b.p0) / np.linalg.norm(b.p1 - b.p0)
        v = points[sel] - b.p0
        radial = v - np.outer(v @ axis, axis)
        n[sel] = radial / np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-12)
    for i, l in enumerate(scene.leaves):
        sel = (kind == 3) & (idx == i)
        n[sel] = l.normal
    return n


def _background(h, w, rng):
    """Smooth blotchy foliage-and-sky backdrop."""
    coarse = rng.random((h // 16 + 2, w // 16 + 2, 3))
    yy = np.linspace(0, coarse.shape[0] - 1.001, h)
    xx = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = yy.astype(int), xx.astype(int)
    fy, fx = (yy - y0)[:, None, None], (xx - x0)[None, :, None]
    c = coarse
    blend = (c[y0][:, x0] * (1 - fy) * (1 - fx) + c[y0 + 1][:, x0] * fy * (1 - fx)
             + c[y0][:, x0 + 1] * (1 - fy) * fx + c[y0 + 1][:, x0 + 1] * fy * fx)
    sky = np.array([0.62, 0.74, 0.86])
    foliage = np.array([0.18, 0.32, 0.14])
    mix = blend[..., :1]
    return foliage * (1 - mix) + sky * mix * 0.9 + 0.1 * (blend - 0.5)


def render(scene: SceneSpec, pose: Pose, intr: CameraIntrinsics, noise: NoiseModel | None = None,
           seed: int = 0) -> RenderedFrame:
    """Ray-cast the scene from ``pose`` (camera-to-world). Nearest surface wins."""
    noise = noise if noise is not None else NoiseModel()
    rng = np.random.default_rng(seed)
    rays_cam = camera_rays(intr)
    d = rays_cam @ pose.rotation.T
    o = pose.translation
    n_pix = len(d)

    best_t = np.full(n_pix, np.inf)
    kind = np.zeros(n_pix, dtype=np.int8)   # 0 none, 1 fruit, 2 branch, 3 leaf
    idx = np.full(n_pix, -1, dtype=np.int32)

    def take(t, k, i):
        closer = t < best_t
        best_t[closer] = t[closer]
        kind[closer] = k
        idx[closer] = i

    for i, f in enumerate(scene.fruits):
        take(_sphere_hits(o, d, f.centre, f.radius), 1, i)
    for i, b in enumerate(scene.branches):
        take(_cylinder_hits(o, d, b.p0, b.p1, b.radius), 2, i)
    for i, l in enumerate(scene.leaves):
        take(_disc_hits(o, d, l.centre, l.normal, l.radius), 3, i)

    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t, 0.0)   # unit-z camera rays: t is the z-depth
    inst = np.where(kind == 1, idx + 1, 0).astype(np.uint16)

    points = o + np.where(hit, best_t, 0.0)[:, None] * d
    normals = _normals(kind, idx, points, scene)
    unit_d = d / np.linalg.norm(d, axis=1, keepdims=True)
    cos_inc = np.abs(np.einsum("ij,ij->i", normals, unit_d))

    base = np.zeros((n_pix, 3))
    fruit_tint = np.random.default_rng(scene.seed + 7919).uniform(-0.08, 0.08, size=(max(len(scene.fruits), 1), 3))
    base[kind == 1] = FRUIT_RGB + fruit_tint[idx[kind == 1]]
    base[kind == 2] = BRANCH_RGB
    base[kind == 3] = LEAF_RGB
    lambert = np.abs(normals @ LIGHT_DIR)
    shade = 0.35 + 0.65 * lambert
    rgb = base * shade[:, None]
    bg = _background(intr.height, intr.width, np.random.default_rng(scene.seed * 31 + 17)).reshape(-1, 3)
    rgb[~hit] = bg[~hit]

    if noise.enabled:
        z = depth[hit]
        depth[hit] = z + rng.normal(0.0, 1.0, size=z.shape) * noise.sigma0 * z * z
        drop = rng.random(n_pix) < noise.dropout_max * (1.0 - cos_inc) ** 2
        depth[hit & drop] = 0.0
        depth = np.maximum(depth, 0.0)
        rgb = rgb + rng.normal(0.0, noise.rgb_sigma, size=rgb.shape)

    rgb8 = np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8)
    h, w = intr.height, intr.width
    return RenderedFrame(rgb8.reshape(h, w, 3), depth.reshape(h, w), inst.reshape(h, w), pose, intr,
                         hit.reshape(h, w))


def camera_at(target_xy, distance: float) -> Pose:
    """Camera looking down +z from ``distance`` in front of the canopy plane."""
    x, y = target_xy
    return Pose.from_translation([x, y, -distance])
