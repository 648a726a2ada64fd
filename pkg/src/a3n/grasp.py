"""Grasp pose type and approach-angle conventions.

The approach vector points from the fruit centre toward the gripper. With zero
angles it is ``(0, 0, -1)`` (back toward a camera looking down +z); pitch
rotates it about x, then yaw about y::

    a = R_y(yaw) @ R_x(pitch) @ (0, 0, -1)
      = (-sin(yaw) cos(pitch), sin(pitch), -cos(yaw) cos(pitch))
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ANGLE_LIMIT = math.pi / 4


@dataclass(frozen=True)
class GraspPose:
    centre: np.ndarray
    pitch: float
    yaw: float
    box_extents: np.ndarray
    offsets: np.ndarray | None = None
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "centre", np.asarray(self.centre, dtype=np.float64).reshape(3))
        object.__setattr__(self, "box_extents", np.asarray(self.box_extents, dtype=np.float64).reshape(3))
        if self.offsets is not None:
            object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64).reshape(3))
        if abs(self.pitch) > ANGLE_LIMIT + 1e-12 or abs(self.yaw) > ANGLE_LIMIT + 1e-12:
            raise ValueError(f"angles ({self.pitch}, {self.yaw}) exceed the admissible region")
        if np.any(self.box_extents <= 0):
            raise ValueError("box extents must be positive")

    @property
    def approach(self) -> np.ndarray:
        return approach_vector(self.pitch, self.yaw)

    def to_json(self) -> dict:
        return {
            "centre_m": [float(c) for c in self.centre],
            "pitch_rad": float(self.pitch),
            "yaw_rad": float(self.yaw),
            "extents_m": [float(e) for e in self.box_extents],
            "score": float(self.score),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GraspPose":
        return cls(np.array(d["centre_m"]), float(d["pitch_rad"]), float(d["yaw_rad"]),
                   np.array(d["extents_m"]), score=float(d.get("score", 1.0)))


def approach_vector(pitch: float, yaw: float) -> np.ndarray:
    cp = math.cos(pitch)
    return np.array([-math.sin(yaw) * cp, math.sin(pitch), -math.cos(yaw) * cp])


def angles_from_vector(a, clamp: bool = True) -> tuple[float, float]:
    a = np.asarray(a, dtype=np.float64)
    a = a / np.linalg.norm(a)
    pitch = math.asin(max(-1.0, min(1.0, float(a[1]))))
    yaw = math.atan2(-float(a[0]), -float(a[2]))
    if clamp:
        pitch = max(-ANGLE_LIMIT, min(ANGLE_LIMIT, pitch))
        yaw = max(-ANGLE_LIMIT, min(ANGLE_LIMIT, yaw))
    return pitch, yaw


def transform_grasp(g: GraspPose, rotation: np.ndarray, translation: np.ndarray) -> GraspPose:
    """Express a grasp in a parent frame; re-clamps angles after rotating the approach."""
    centre = rotation @ g.centre + translation
    pitch, yaw = angles_from_vector(rotation @ g.approach)
    offsets = None if g.offsets is None else rotation @ g.offsets
    return GraspPose(centre, pitch, yaw, g.box_extents, offsets, g.score)


def approach_angle_deg(a: GraspPose, b: GraspPose) -> float:
    """Angle between two grasps' approach vectors, in degrees."""
    c = float(np.clip(np.dot(a.approach, b.approach), -1.0, 1.0))
    return math.degrees(math.acos(c))
