"""Octree occupancy map with log-odds updates and ray clearing."""
from __future__ import annotations

import json
import math
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .geometry import PointCloud, Pose

HIT = 0.85
MISS = -0.4
CLAMP_MIN = -2.0
CLAMP_MAX = 3.5
OCCUPIED_AT = 0.85
FREE_AT = -0.4


class CellState(str, Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    UNKNOWN = "unknown"


class _Node:
    __slots__ = ("children", "value")

    def __init__(self, value=None):
        self.children: list | None = None
        self.value: float | None = value


def _state(value: float | None) -> CellState:
    if value is None:
        return CellState.UNKNOWN
    if value >= OCCUPIED_AT:
        return CellState.OCCUPIED
    if value <= FREE_AT:
        return CellState.FREE
    return CellState.UNKNOWN


class OccupancyMap:
    """Occupancy octree over a cube centred on ``center``.

    The cube edge is rounded up to ``resolution * 2**depth`` so that leaves are
    exactly ``resolution`` wide. Not safe for concurrent writers.
    """

    def __init__(self, resolution: float = 0.05, center=(0.0, 0.0, 0.0), edge: float = 2.0,
                 ray_clearing: bool = True):
        if not resolution > 0 or not edge > 0:
            raise ParameterError("resolution and edge must be positive")
        self.resolution = float(resolution)
        self.depth = max(0, math.ceil(math.log2(edge / resolution) - 1e-12))
        self.cells = 2 ** self.depth
        self.edge = self.resolution * self.cells
        self.origin = np.asarray(center, dtype=np.float64) - self.edge / 2
        self.ray_clearing = ray_clearing
        self.root = _Node()

    # keys ---------------------------------------------------------------

    def key_of(self, point) -> tuple[int, int, int] | None:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.origin) / self.resolution).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.cells):
            return None
        return int(idx[0]), int(idx[1]), int(idx[2])

    def key_centre(self, key) -> np.ndarray:
        return self.origin + (np.asarray(key, dtype=np.float64) + 0.5) * self.resolution

    def _find(self, key):
        node = self.root
        for level in range(self.depth - 1, -1, -1):
            if node.children is None:
                return node
            bit = ((key[0] >> level) & 1) | (((key[1] >> level) & 1) << 1) | (((key[2] >> level) & 1) << 2)
            node = node.children[bit]
            if node is None:
                return None
        return node

    def _leaf(self, key) -> _Node:
        node = self.root
        for level in range(self.depth - 1, -1, -1):
            if node.children is None:
                # expand a pruned (or fresh) node, passing its value down
                node.children = [None] * 8 if node.value is None else [_Node(node.value) for _ in range(8)]
                node.value = None
            bit = ((key[0] >> level) & 1) | (((key[1] >> level) & 1) << 1) | (((key[2] >> level) & 1) << 2)
            child = node.children[bit]
            if child is None:
                child = node.children[bit] = _Node()
            node = child
        return node

    def log_odds(self, key) -> float | None:
        node = self._find(key)
        return None if node is None else node.value

    # updates ------------------------------------------------------------

    def _update(self, key, delta: float) -> None:
        leaf = self._leaf(key)
        v = (leaf.value or 0.0) + delta
        leaf.value = min(CLAMP_MAX, max(CLAMP_MIN, v))

    def insert_scan(self, cloud: PointCloud, sensor_pose: Pose) -> int:
        """Register a sensor-frame scan into the map; returns the number of skipped points.

        Within one scan a leaf that receives an endpoint is never cleared, and
        each endpoint leaf is updated once however many points fall into it.
        """
        if cloud.empty:
            return 0
        world = sensor_pose.apply(cloud.points)
        idx = np.floor((world - self.origin) / self.resolution).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.cells), axis=1)
        skipped = int((~inside).sum())
        world, idx = world[inside], idx[inside]
        if len(idx) == 0:
            return skipped
        keys, inverse = np.unique(idx, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        sums = np.zeros((len(keys), 3))
        np.add.at(sums, inverse, world)
        targets = sums / np.bincount(inverse)[:, None]
        hits = {tuple(int(c) for c in k) for k in keys}
        free: set = set()
        if self.ray_clearing:
            origin = sensor_pose.translation
            for target in targets:
                free.update(self._trace(origin, target))
            free -= hits
        for key in sorted(free):
            self._update(key, MISS)
        for key in sorted(hits):
            self._update(key, HIT)
        return skipped

    def _trace(self, start: np.ndarray, end: np.ndarray) -> list:
        """In-bounds leaf keys crossed by the segment start -> end, endpoint leaf excluded."""
        res = self.resolution
        p0 = (start - self.origin) / res
        p1 = (end - self.origin) / res
        cur = np.floor(p0).astype(np.int64)
        last = np.floor(p1).astype(np.int64)
        d = p1 - p0
        step = np.sign(d).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_delta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
            nxt = np.where(step > 0, cur + 1 - p0, p0 - cur)
            t_max = np.where(d != 0, nxt * t_delta, np.inf)
        out = []
        n = self.cells
        cur = [int(c) for c in cur]
        last = [int(c) for c in last]
        t_max = [float(t) for t in t_max]
        t_delta = [float(t) for t in t_delta]
        step = [int(s) for s in step]
        for _ in range(int(np.abs(np.asarray(last) - np.asarray(cur)).sum()) + 1):
            if cur == last:
                break
            if 0 <= cur[0] < n and 0 <= cur[1] < n and 0 <= cur[2] < n:
                out.append((cur[0], cur[1], cur[2]))
            axis = min(range(3), key=lambda a: t_max[a])
            if t_max[axis] > 1.0:
                break
            cur[axis] += step[axis]
            t_max[axis] += t_delta[axis]
        return out

    # queries --------------------------------------------------------------

    def query(self, point) -> CellState:
        key = self.key_of(point)
        if key is None:
            return CellState.UNKNOWN
        node = self._find(key)
        return CellState.UNKNOWN if node is None else _state(node.value)

    def _walk(self):
        """Yield (min_key, size_in_leaves, value) for every valued node."""
        stack = [(self.root, (0, 0, 0), self.cells)]
        while stack:
            node, key, size = stack.pop()
            if node.children is None:
                if node.value is not None:
                    yield key, size, node.value
                continue
            half = size // 2
            for bit in range(7, -1, -1):
                child = node.children[bit]
                if child is not None:
                    ck = (key[0] + (bit & 1) * half, key[1] + ((bit >> 1) & 1) * half,
                          key[2] + ((bit >> 2) & 1) * half)
                    stack.append((child, ck, half))

    def states(self) -> dict:
        """Map leaf key -> CellState for every touched leaf (pruned nodes expanded)."""
        out = {}
        for key, size, value in self._walk():
            s = _state(value)
            for i in range(size):
                for j in range(size):
                    for k in range(size):
                        out[(key[0] + i, key[1] + j, key[2] + k)] = s
        return out

    def occupied_voxels(self) -> list[tuple[np.ndarray, float]]:
        out = []
        for key, size, value in self._walk():
            if _state(value) is CellState.OCCUPIED:
                edge = size * self.resolution
                centre = self.origin + np.asarray(key, dtype=np.float64) * self.resolution + edge / 2
                out.append((centre, edge))
        out.sort(key=lambda cv: tuple(cv[0]))
        return out

    def prune(self) -> int:
        """Merge sibling leaves that are all present with equal values; returns merges done."""
        def rec(node) -> int:
            if node.children is None:
                return 0
            merged = sum(rec(c) for c in node.children if c is not None)
            kids = node.children
            if all(c is not None and c.children is None and c.value is not None for c in kids):
                if len({c.value for c in kids}) == 1:
                    node.value = kids[0].value
                    node.children = None
                    merged += 1
            return merged
        return rec(self.root)

    # export -----------------------------------------------------------------

    def to_json(self) -> dict:
        voxels = self.occupied_voxels()
        return {
            "resolution": self.resolution,
            "origin": self.origin.tolist(),
            "edge": self.edge,
            "voxels": [{"centre": c.tolist(), "edge": e} for c, e in voxels],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def insert_scan(occ: OccupancyMap, cloud: PointCloud, sensor_pose: Pose) -> tuple[OccupancyMap, int]:
    skipped = occ.insert_scan(cloud, sensor_pose)
    return occ, skipped


def query(occ: OccupancyMap, point) -> CellState:
    return occ.query(point)


def occupied_voxels(occ: OccupancyMap) -> list[tuple[np.ndarray, float]]:
    return occ.occupied_voxels()
