"""Camera projection, point-cloud extraction and point-set preprocessing.

All functions are pure: inputs are never modified and randomised helpers take
an explicit seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, EmptyInputError, ParameterError, ShapeError

DEFAULT_CONTEXT_RADIUS = 0.3
DEFAULT_VOXEL_RESOLUTION = 0.005
DEFAULT_OUTLIER_SPREAD = 0.05
_EDGE_EPS = 1e-9  # pixels of round-off tolerated at the image border


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParameterError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the image centre."""
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking points from a child frame into a parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ParameterError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["rotation"], dtype=np.float64), np.array(d["translation"], dtype=np.float64))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"points must be N x 3, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0

    def transformed(self, pose: Pose, frame: str) -> "PointCloud":
        return PointCloud(pose.apply(self.points), frame)


@dataclass(frozen=True)
class PartitionedPoints:
    object_points: PointCloud
    context_points: PointCloud
    centroid: np.ndarray


def deproject(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics, frame: str = "camera") -> PointCloud:
    """Lift masked pixels with valid depth to 3D camera-frame points.

    Points come out in row-major pixel order. A depth of 0 marks an invalid
    measurement.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask)
    expected = (intr.height, intr.width)
    if depth.shape != expected or mask.shape != expected:
        raise ShapeError(f"depth {depth.shape} and mask {mask.shape} must both be {expected}")
    v, u = np.nonzero((mask > 0) & (depth > 0))
    d = depth[v, u]
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    return PointCloud(np.stack([x, y, d], axis=1), frame)


def project(point, intr: CameraIntrinsics) -> tuple[float, float] | None:
    """Pixel coordinates of a camera-frame point, or None when it falls outside the image."""
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    if z <= 0:
        raise BehindCameraError(f"point has z={z}; must be in front of the camera")
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (-_EDGE_EPS <= u < intr.width and -_EDGE_EPS <= v < intr.height):
        return None
    return max(u, 0.0), max(v, 0.0)


def project_many(points: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection; returns (uv, in_frame) and ignores points with z <= 0."""
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = intr.fx * points[:, 0] / zs + intr.cx
    v = intr.fy * points[:, 1] / zs + intr.cy
    inside = front & (u >= -_EDGE_EPS) & (u < intr.width) & (v >= -_EDGE_EPS) & (v < intr.height)
    return np.stack([u, v], axis=1), inside


def partition(cloud_all: PointCloud, instance_cloud: PointCloud,
              radius: float = DEFAULT_CONTEXT_RADIUS) -> PartitionedPoints:
    """Split a scene cloud into one object's points and its surrounding context.

    Context points are those of ``cloud_all`` that are not in ``instance_cloud``
    (exact row match) and lie within ``radius`` of the instance centroid.
    """
    if instance_cloud.empty:
        raise EmptyInputError("instance cloud is empty")
    centroid = instance_cloud.points.mean(axis=0)
    pts = cloud_all.points
    if len(pts):
        near = np.linalg.norm(pts - centroid, axis=1) <= radius
        not_obj = ~_rows_in(pts, instance_cloud.points)
        ctx = pts[near & not_obj]
    else:
        ctx = pts
    return PartitionedPoints(instance_cloud, PointCloud(ctx, cloud_all.frame), centroid)


def _rows_in(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    dt = np.dtype((np.void, a.dtype.itemsize * 3))
    av = np.ascontiguousarray(a).view(dt).ravel()
    bv = np.ascontiguousarray(b.astype(a.dtype)).view(dt).ravel()
    return np.isin(av, bv)


def partition_masked(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics,
                     radius: float = DEFAULT_CONTEXT_RADIUS) -> PartitionedPoints:
    """``partition`` specialised to pixel masks: avoids row matching on full frames."""
    mask = np.asarray(mask) > 0
    inst = deproject(depth, mask, intr)
    if inst.empty:
        raise EmptyInputError("mask covers no valid depth")
    rest = deproject(depth, ~mask, intr)
    centroid = inst.points.mean(axis=0)
    keep = np.linalg.norm(rest.points - centroid, axis=1) <= radius
    return PartitionedPoints(inst, PointCloud(rest.points[keep], rest.frame), centroid)


def voxel_downsample(cloud: PointCloud, resolution: float) -> PointCloud:
    """Replace the points of each occupied grid cell by their centroid.

    Output order is ascending lexicographic cell index.
    """
    if not resolution > 0:
        raise ParameterError(f"resolution must be positive, got {resolution}")
    pts = cloud.points
    if len(pts) == 0:
        return cloud
    cells = np.floor(pts / resolution).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    out = sums / counts[:, None]
    # Rounding can push a centroid across its cell boundary; nudge it back so
    # re-downsampling the output is a no-op.
    for _ in range(8):
        bad = np.floor(out / resolution).astype(np.int64) != uniq
        if not bad.any():
            break
        target = np.where(np.floor(out / resolution) < uniq, np.inf, -np.inf)
        out = np.where(bad, np.nextafter(out, target), out)
    return PointCloud(out, cloud.frame)


def center_align(cloud: PointCloud) -> tuple[PointCloud, np.ndarray]:
    if cloud.empty:
        raise EmptyInputError("cannot centre an empty cloud")
    centroid = cloud.points.mean(axis=0)
    aligned = cloud.points - centroid
    # second pass removes the residual left by floating-point rounding
    aligned = aligned - aligned.mean(axis=0)
    return PointCloud(aligned, cloud.frame), centroid


def corrupt_missing(cloud: PointCloud, fraction: float, seed) -> PointCloud:
    """Drop ``round(fraction * N)`` points uniformly at random.

    For a fixed seed the removed sets are nested across fractions.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must be in [0, 1], got {fraction}")
    n = len(cloud)
    k = int(round(fraction * n))
    if k == 0:
        return cloud
    order = np.random.default_rng(seed).permutation(n)
    keep = np.sort(order[k:])
    return PointCloud(cloud.points[keep], cloud.frame)


def corrupt_outliers(cloud: PointCloud, fraction: float, spread: float = DEFAULT_OUTLIER_SPREAD,
                     seed=None) -> PointCloud:
    """Append ``round(fraction * N)`` uniform points from the inflated bounding box."""
    if fraction < 0:
        raise ParameterError(f"fraction must be non-negative, got {fraction}")
    n = len(cloud)
    if n == 0 and fraction > 0:
        raise EmptyInputError("cannot add outliers around an empty cloud")
    k = int(round(fraction * n))
    if k == 0:
        return cloud
    lo = cloud.points.min(axis=0) - spread
    hi = cloud.points.max(axis=0) + spread
    extra = np.random.default_rng(seed).uniform(lo, hi, size=(k, 3))
    return PointCloud(np.vstack([cloud.points, extra]), cloud.frame)
