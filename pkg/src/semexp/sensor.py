"""Panoramic LiDAR-camera rig simulation.

Projection maps a sensor-frame point (X, Y, Z) to panoramic pixel coordinates:

    I_x = W_img * (-atan2(Y, X) + pi) / (2 pi)
    I_y = f_y * (-Z / sqrt(X^2 + Y^2)) + y_0

Scans and detections are pure functions of (world, pose, seed), so repeated
calls are bit-identical and safe from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, Pose


class ProjectionError(ValueError):
    """Point lies on the sensor's vertical axis; azimuth undefined."""


@dataclass
class SensorConfig:
    max_range: float = 8.0
    h_fov: float = 2.0 * math.pi
    v_fov: float = math.radians(45.0)
    channels: int = 12
    h_steps: int = 90
    w_img: int = 1024
    h_img: int = 512
    f_y: float = 618.0          # vertical focal length, pixels
    y_0: float = 256.0          # principal point row
    range_noise: float = 0.01   # sigma of Gaussian range noise, meters
    min_cloud_points: int = 5
    fp_rate: float = 0.0        # false-positive measurements per detection pass
    fn_rate: float = 0.0        # probability of dropping a true measurement

    def __post_init__(self):
        if self.w_img <= 0 or self.f_y <= 0:
            raise ValueError("w_img and f_y must be positive")
        if self.channels < 2:
            raise ValueError("need at least 2 channels")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass
class Measurement:
    """One detected instance: panoramic mask, world-frame cloud, capture pose."""

    label: str
    pose: Pose
    mask: set                    # {(ix, iy)} pixel coordinates
    instance_cloud: np.ndarray   # (N,3) world-frame points
    bbox: Box = field(init=False)

    def __post_init__(self):
        if len(self.instance_cloud) == 0:
            raise ValueError("measurement needs a non-empty cloud")
        if not self.mask:
            raise ValueError("measurement needs a non-empty mask")
        self.bbox = Box.bounding(self.instance_cloud)


@dataclass
class Scan:
    points: np.ndarray           # (N,3) world-frame ray endpoints
    is_max_range: np.ndarray     # (N,) bool
    origin: np.ndarray           # (3,) sensor position
    degenerate: bool = False     # pose was inside solid geometry


def project_panoramic(p, cfg: SensorConfig, extrinsic=None):
    """Project one sensor-frame point to (I_x, I_y) pixels."""
    p = np.asarray(p, dtype=float)
    if extrinsic is not None:
        rot, trans = extrinsic
        p = np.asarray(rot, dtype=float) @ p + np.asarray(trans, dtype=float)
    x, y, z = p
    rho = math.hypot(x, y)
    if rho == 0.0:
        raise ProjectionError("point on the vertical sensor axis")
    ix = cfg.w_img * (-math.atan2(y, x) + math.pi) / (2.0 * math.pi)
    if ix >= cfg.w_img:
        ix -= cfg.w_img
    iy = cfg.f_y * (-z / rho) + cfg.y_0
    return ix, iy


def project_batch(pts, cfg: SensorConfig):
    """Vectorized projection of sensor-frame points (N,3) -> (ix, iy) arrays."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rho = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(rho == 0.0):
        raise ProjectionError("point on the vertical sensor axis")
    ix = cfg.w_img * (-np.arctan2(pts[:, 1], pts[:, 0]) + np.pi) / (2.0 * np.pi)
    ix = np.where(ix >= cfg.w_img, ix - cfg.w_img, ix)
    iy = cfg.f_y * (-pts[:, 2] / rho) + cfg.y_0
    return ix, iy


def ray_box_entry(origins, dirs, boxes_lo, boxes_hi):
    """Entry distance of each ray into each box; +inf where the ray misses.

    Rays starting inside a box get entry distance 0.
    """
    o = origins[:, None, :]
    d = dirs[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (boxes_lo[None, :, :] - o) / d
        t2 = (boxes_hi[None, :, :] - o) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        # axes with zero direction: inside slab -> always ok, else never
        zero = d == 0.0
        inside = (o >= boxes_lo[None, :, :]) & (o <= boxes_hi[None, :, :])
        near = np.where(zero, np.where(inside, -np.inf, np.inf), near)
        far = np.where(zero, np.where(inside, np.inf, -np.inf), far)
    t_entry = near.max(axis=2)
    t_exit = far.min(axis=2)
    hit = (t_exit >= t_entry) & (t_exit >= 0.0)
    entry = np.where(hit, np.maximum(t_entry, 0.0), np.inf)
    return entry


def bounds_exit_distance(origin, dirs, bounds: Box):
    """Distance at which each ray leaves the world bounds (inner wall hit)."""
    lo = np.asarray(bounds.lo)
    hi = np.asarray(bounds.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, :] - origin[None, :]) / dirs
        t2 = (hi[None, :] - origin[None, :]) / dirs
        far = np.where(dirs != 0.0, np.maximum(t1, t2), np.inf)
    return far.min(axis=1)


def scan_directions(pose: Pose, cfg: SensorConfig):
    """One unit direction per (channel, azimuth step), world frame."""
    elev = np.linspace(-cfg.v_fov / 2.0, cfg.v_fov / 2.0, cfg.channels)
    azim = pose.yaw + np.linspace(0.0, cfg.h_fov, cfg.h_steps, endpoint=False)
    e, a = np.meshgrid(elev, azim, indexing="ij")
    ce = np.cos(e.ravel())
    return np.stack(
        [ce * np.cos(a.ravel()), ce * np.sin(a.ravel()), np.sin(e.ravel())], axis=1
    )


def simulate_scan(world, pose: Pose, cfg: SensorConfig, rng_seed: int) -> Scan:
    """Ray-cast one full panoramic sweep against the scenario geometry."""
    origin = pose.xyz
    if world.point_in_solid(origin):
        n = cfg.channels * cfg.h_steps
        return Scan(
            points=np.repeat(origin[None, :], n, axis=0),
            is_max_range=np.zeros(n, dtype=bool),
            origin=origin,
            degenerate=True,
        )
    dirs = scan_directions(pose, cfg)
    origins = np.repeat(origin[None, :], len(dirs), axis=0)
    ranges = bounds_exit_distance(origin, dirs, world.spec.bounds)
    if len(world.solid_lo):
        entry = ray_box_entry(origins, dirs, world.solid_lo, world.solid_hi)
        ranges = np.minimum(ranges, entry.min(axis=1))
    if cfg.range_noise > 0.0:
        rng = np.random.default_rng(rng_seed)
        ranges = ranges + rng.normal(0.0, cfg.range_noise, size=len(ranges))
        ranges = np.maximum(ranges, 0.0)
    is_max = ranges > cfg.max_range
    ranges = np.minimum(ranges, cfg.max_range)
    return Scan(points=origin + dirs * ranges[:, None], is_max_range=is_max, origin=origin)


def visible_points(world, eye, pts, tol=1e-6):
    """Exact box-occlusion test: point visible iff nothing enters the ray earlier."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    delta = pts - eye[None, :]
    dist = np.linalg.norm(delta, axis=1)
    ok = dist > 0.0
    out = np.zeros(len(pts), dtype=bool)
    if not ok.any():
        return out
    dirs = np.zeros_like(delta)
    dirs[ok] = delta[ok] / dist[ok, None]
    if len(world.solid_lo):
        entry = ray_box_entry(
            np.repeat(eye[None, :], len(pts), axis=0), dirs,
            world.solid_lo, world.solid_hi,
        ).min(axis=1)
    else:
        entry = np.full(len(pts), np.inf)
    out[ok] = entry[ok] >= dist[ok] - tol
    return out


def simulate_detection(world, pose: Pose, cfg: SensorConfig, rng_seed: int):
    """Ground-truth instance detection with optional false positives/negatives."""
    rng = np.random.default_rng(rng_seed)
    eye = pose.xyz
    measurements = []
    if world.point_in_solid(eye):
        return measurements
    for obj in world.objects:
        pts = obj.surface_points
        delta = pts - eye[None, :]
        dist = np.linalg.norm(delta, axis=1)
        horiz = np.hypot(delta[:, 0], delta[:, 1])
        with np.errstate(invalid="ignore"):
            elev_ok = np.abs(np.arctan2(delta[:, 2], horiz)) <= cfg.v_fov / 2.0
        cand = (dist <= cfg.max_range) & (horiz > 0.0) & elev_ok
        if cand.sum() < cfg.min_cloud_points:
            continue
        vis = np.zeros(len(pts), dtype=bool)
        vis[cand] = visible_points(world, eye, pts[cand], tol=world.resolution * 0.5)
        if vis.sum() < cfg.min_cloud_points:
            continue
        if cfg.fn_rate > 0.0 and rng.random() < cfg.fn_rate:
            continue
        cloud = pts[vis]
        ix, iy = project_batch(pose.to_sensor(cloud), cfg)
        inside = (iy >= 0) & (iy < cfg.h_img)
        if inside.sum() < cfg.min_cloud_points:
            continue
        cloud = cloud[inside]
        mask = set(zip(ix[inside].astype(int).tolist(), iy[inside].astype(int).tolist()))
        measurements.append(Measurement(obj.label, pose, mask, cloud))
    if cfg.fp_rate > 0.0 and rng.random() < cfg.fp_rate and world.objects:
        measurements.append(_clutter_measurement(world, pose, cfg, rng))
    return measurements


def _clutter_measurement(world, pose: Pose, cfg: SensorConfig, rng):
    lo = np.asarray(world.spec.bounds.lo)
    hi = np.asarray(world.spec.bounds.hi)
    center = rng.uniform(lo + 0.5, hi - 0.5)
    center[2] = min(center[2], pose.z)
    cloud = center[None, :] + rng.normal(0.0, 0.15, size=(20, 3))
    label = world.objects[int(rng.integers(len(world.objects)))].label
    ix, iy = project_batch(pose.to_sensor(cloud), cfg)
    mask = set(zip(ix.astype(int).tolist(), iy.astype(int).tolist()))
    return Measurement(label, pose, mask, cloud)


def cluster_closest(points, obs_pose: Pose, eps: float, min_pts: int, ground_z=0.02):
    """Keep the densest group nearest the observer; drops ground and noise points."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pts = pts[pts[:, 2] > ground_z]
    if len(pts) < min_pts:
        return np.empty((0, 3))
    from sklearn.cluster import DBSCAN

    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(pts)
    best_label, best_dist = None, math.inf
    for lbl in sorted(set(labels)):
        if lbl == -1:
            continue
        centroid = pts[labels == lbl].mean(axis=0)
        d = float(np.linalg.norm(centroid - obs_pose.xyz))
        if d < best_dist:
            best_label, best_dist = lbl, d
    if best_label is None:
        return np.empty((0, 3))
    return pts[labels == best_label]
