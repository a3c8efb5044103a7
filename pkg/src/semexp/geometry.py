"""Poses, axis-aligned boxes, and polyline paths shared by all modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose:
    """Planar robot pose at fixed sensor height: x, y, z in meters, yaw in radians."""

    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dist_xy(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_world(self, p_sensor: np.ndarray) -> np.ndarray:
        """Transform sensor-frame points (N,3) into the world frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        p = np.atleast_2d(np.asarray(p_sensor, dtype=float))
        out = np.empty_like(p)
        out[:, 0] = c * p[:, 0] - s * p[:, 1] + self.x
        out[:, 1] = s * p[:, 0] + c * p[:, 1] + self.y
        out[:, 2] = p[:, 2] + self.z
        return out

    def to_sensor(self, p_world: np.ndarray) -> np.ndarray:
        """Transform world points (N,3) into this pose's sensor frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        p = np.atleast_2d(np.asarray(p_world, dtype=float))
        dx = p[:, 0] - self.x
        dy = p[:, 1] - self.y
        out = np.empty_like(p)
        out[:, 0] = c * dx + s * dy
        out[:, 1] = -s * dx + c * dy
        out[:, 2] = p[:, 2] - self.z
        return out


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box given by two corners (meters)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"box has negative extent: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @staticmethod
    def from_arrays(lo, hi) -> "Box":
        return Box(tuple(np.asarray(lo, dtype=float)), tuple(np.asarray(hi, dtype=float)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def contains_xy(self, x: float, y: float) -> bool:
        return self.lo[0] <= x <= self.hi[0] and self.lo[1] <= y <= self.hi[1]

    def intersection(self, other: "Box"):
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(tuple(lo), tuple(hi))

    def intersection_volume(self, other: "Box") -> float:
        ext = np.minimum(self.hi, other.hi) - np.maximum(self.lo, other.lo)
        if np.any(ext <= 0):
            return 0.0
        return float(np.prod(ext))

    def iou(self, other: "Box") -> float:
        inter = self.intersection_volume(other)
        union = self.volume + other.volume - inter
        return inter / union if union > 0 else 0.0

    def io_min(self, other: "Box") -> float:
        """Intersection volume over the smaller box volume."""
        vmin = min(self.volume, other.volume)
        return self.intersection_volume(other) / vmin if vmin > 0 else 0.0

    def io_max(self, other: "Box") -> float:
        """Intersection volume over the larger box volume."""
        vmax = max(self.volume, other.volume)
        return self.intersection_volume(other) / vmax if vmax > 0 else 0.0

    def inflate(self, margin: float) -> "Box":
        lo = np.asarray(self.lo) - margin
        hi = np.asarray(self.hi) + margin
        return Box(tuple(lo), tuple(hi))

    @staticmethod
    def bounding(points: np.ndarray) -> "Box":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


@dataclass
class PathPlan:
    """Ordered pose polyline with its accumulated Euclidean length."""

    nodes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("path needs at least one node")

    @property
    def total_length(self) -> float:
        return sum(
            math.dist(a.xyz, b.xyz) for a, b in zip(self.nodes[:-1], self.nodes[1:])
        )

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def segment_lengths(nodes) -> list:
    return [math.dist(a.xyz, b.xyz) for a, b in zip(nodes[:-1], nodes[1:])]
