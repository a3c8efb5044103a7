"""Probabilistic voxel occupancy grid with log-odds ray integration.

The grid is the single mutable environment model. Planners never touch it
directly; they consume immutable snapshots produced by `VoxelGrid.snapshot`.
"""

from __future__ import annotations

import math

import numpy as np

from .config import MappingConfig

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


class GridError(ValueError):
    """An update or query was rejected by the grid."""


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def traverse_segments(origin, ends, grid_origin, resolution, dims):
    """Walk every segment origin->ends[i] through the voxel lattice.

    Amanatides-Woo stepping run in lockstep across all rays. Returns
    (visited, is_last, ray_id): `visited` is an (M,3) int array of voxel
    indices (multiplicity preserved, interleaved across rays), `is_last`
    marks the voxel containing a ray's endpoint (never set for rays whose
    segment exits the grid), and `ray_id` maps every emission back to its
    ray index.
    """
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    n = len(ends)
    origin = np.asarray(origin, dtype=float)
    grid_origin = np.asarray(grid_origin, dtype=float)
    dims = np.asarray(dims, dtype=np.int64)

    d = ends - origin[None, :]
    v = np.floor((origin - grid_origin) / resolution).astype(np.int64)
    v = np.repeat(v[None, :], n, axis=0)
    v_end = np.floor((ends - grid_origin) / resolution).astype(np.int64)

    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0.0, resolution / np.abs(d), np.inf)
        # parameter t in [0,1] at which each ray first crosses a voxel boundary
        next_boundary = grid_origin[None, :] + (v + (step > 0)) * resolution
        t_max = np.where(d != 0.0, (next_boundary - origin[None, :]) / d, np.inf)

    active = np.ones(n, dtype=bool)
    entered = np.zeros(n, dtype=bool)
    all_ids = np.arange(n)
    visited_chunks = []
    last_chunks = []
    ray_chunks = []
    max_iter = int(dims.sum()) * 4 + 8
    for _ in range(max_iter):
        if not active.any():
            break
        in_bounds = ((v >= 0) & (v < dims[None, :])).all(axis=1)
        at_end = (v == v_end).all(axis=1)
        done_t = t_max.min(axis=1) >= 1.0
        finished = at_end | done_t
        exited = entered & ~in_bounds  # left the grid; it cannot re-enter

        emit = active & in_bounds
        if emit.any():
            visited_chunks.append(v[emit].copy())
            last_chunks.append(finished[emit])
            ray_chunks.append(all_ids[emit])
        entered |= emit

        active &= ~(finished | exited)
        if not active.any():
            break
        axis = np.argmin(t_max, axis=1)
        rows = all_ids[active]
        cols = axis[active]
        v[rows, cols] += step[rows, cols]
        t_max[rows, cols] += t_delta[rows, cols]

    if visited_chunks:
        visited = np.concatenate(visited_chunks, axis=0)
        is_last = np.concatenate(last_chunks, axis=0)
        ray_id = np.concatenate(ray_chunks, axis=0)
    else:
        visited = np.empty((0, 3), dtype=np.int64)
        is_last = np.empty((0,), dtype=bool)
        ray_id = np.empty((0,), dtype=np.int64)
    return visited, is_last, ray_id


class VoxelGrid:
    """Bounded 3D occupancy volume; cells start unknown at probability 0.5."""

    def __init__(self, origin, dims, cfg: MappingConfig | None = None):
        self.cfg = cfg or MappingConfig()
        if self.cfg.resolution <= 0:
            raise GridError("resolution must be positive")
        self.origin = np.asarray(origin, dtype=float)
        self.dims = np.asarray(dims, dtype=np.int64)
        if np.any(self.dims <= 0):
            raise GridError(f"invalid dims {dims}")
        self.resolution = float(self.cfg.resolution)
        self.log_odds = np.zeros(tuple(self.dims), dtype=np.float32)
        self.touched = np.zeros(tuple(self.dims), dtype=bool)
        self._lo_occ = _logit(self.cfg.occupied_threshold)

    @classmethod
    def for_bounds(cls, lo, hi, cfg: MappingConfig | None = None) -> "VoxelGrid":
        cfg = cfg or MappingConfig()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        dims = np.maximum(np.ceil((hi - lo) / cfg.resolution - 1e-9), 1).astype(np.int64)
        return cls(lo, dims, cfg)

    # -- indexing ---------------------------------------------------------

    def world_to_voxel(self, p):
        p = np.asarray(p, dtype=float)
        return np.floor((p - self.origin) / self.resolution).astype(np.int64)

    def voxel_center(self, v):
        v = np.asarray(v, dtype=float)
        return self.origin + (v + 0.5) * self.resolution

    def in_bounds(self, v) -> bool:
        v = np.asarray(v)
        return bool(np.all(v >= 0) and np.all(v < self.dims))

    def contains_point(self, p) -> bool:
        return self.in_bounds(self.world_to_voxel(p))

    # -- updates ----------------------------------------------------------

    def integrate_scan(self, origin, hit_points, is_max_range) -> None:
        """Ray-cast all scan returns into the grid.

        Voxels traversed before an endpoint move toward free; the endpoint
        voxel of a non-max-range return moves toward occupied. Log-odds are
        clamped to the configured band.
        """
        origin = np.asarray(origin, dtype=float)
        if not self.contains_point(origin):
            raise GridError(f"scan origin {origin.tolist()} outside grid")
        hit_points = np.atleast_2d(np.asarray(hit_points, dtype=float))
        is_max_range = np.asarray(is_max_range, dtype=bool)
        if len(hit_points) == 0:
            return

        visited, is_last, ray_id = traverse_segments(
            origin, hit_points, self.origin, self.resolution, self.dims
        )
        if len(visited) == 0:
            return

        occupied_emit = is_last & ~is_max_range[ray_id]
        free_emit = ~occupied_emit

        cfg = self.cfg
        flat = np.ravel_multi_index(tuple(visited.T), tuple(self.dims))
        lo_flat = self.log_odds.ravel()
        np.subtract.at(lo_flat, flat[free_emit], np.float32(cfg.log_odds_free))
        np.add.at(lo_flat, flat[occupied_emit], np.float32(cfg.log_odds_hit))
        np.clip(lo_flat, cfg.log_odds_min, cfg.log_odds_max, out=lo_flat)
        self.touched.ravel()[flat] = True

    def mark_occupied(self, voxels, log_odds=None) -> None:
        """Force voxels toward occupied (used by the pseudo-collision hook)."""
        voxels = np.atleast_2d(np.asarray(voxels, dtype=np.int64))
        keep = np.all((voxels >= 0) & (voxels < self.dims[None, :]), axis=1)
        voxels = voxels[keep]
        if len(voxels) == 0:
            return
        value = self.cfg.log_odds_max if log_odds is None else log_odds
        self.log_odds[tuple(voxels.T)] = value
        self.touched[tuple(voxels.T)] = True

    # -- queries ----------------------------------------------------------

    def probability(self, v) -> float:
        v = tuple(np.asarray(v, dtype=np.int64))
        if not self.in_bounds(v):
            raise GridError(f"voxel {v} out of bounds")
        return float(1.0 / (1.0 + math.exp(-float(self.log_odds[v]))))

    def classify(self, v) -> int:
        """UNKNOWN / FREE / OCCUPIED for one voxel index."""
        v = tuple(np.asarray(v, dtype=np.int64))
        if not self.in_bounds(v):
            raise GridError(f"voxel {v} out of bounds")
        p = self.probability(v)
        if p >= self.cfg.occupied_threshold:
            return OCCUPIED
        if not self.touched[v] and abs(p - 0.5) <= self.cfg.unknown_eps:
            return UNKNOWN
        return FREE

    def class_array(self) -> np.ndarray:
        """Vectorized classification of the whole grid (int8)."""
        out = np.zeros(tuple(self.dims), dtype=np.int8)
        occ = self.log_odds >= self._lo_occ
        out[occ] = OCCUPIED
        out[self.touched & ~occ] = FREE
        return out

    def completeness(self, reachable_truth: np.ndarray) -> float:
        """Percent of reachable ground-truth voxels classified known."""
        if reachable_truth.dtype != bool:
            raise GridError("reachable_truth must be a boolean mask")
        total = int(reachable_truth.sum())
        if total == 0:
            raise GridError("empty reachable set")
        known = self.class_array() != UNKNOWN
        return 100.0 * int((known & reachable_truth).sum()) / total

    def snapshot(self) -> "GridSnapshot":
        return GridSnapshot(self)

    def export_known(self, fh) -> int:
        """Write one `x y z p` record per known voxel; returns record count."""
        classes = self.class_array()
        idx = np.argwhere(classes != UNKNOWN)
        centers = self.voxel_center(idx)
        probs = 1.0 / (1.0 + np.exp(-self.log_odds[tuple(idx.T)].astype(float)))
        for (x, y, z), p in zip(centers, probs):
            fh.write(f"{x:.3f} {y:.3f} {z:.3f} {p:.4f}\n")
        return len(idx)


class GridSnapshot:
    """Immutable, shareable view of the grid used by all planners."""

    def __init__(self, grid: VoxelGrid):
        self.origin = grid.origin.copy()
        self.resolution = grid.resolution
        self.dims = grid.dims.copy()
        self.cfg = grid.cfg
        self.classes = grid.class_array()
        self.log_odds = grid.log_odds.copy()
        for arr in (self.classes, self.log_odds, self.origin, self.dims):
            arr.setflags(write=False)
        self.plan_z = None
        self.blocked_xy = None   # occupied anywhere in the robot's height column
        self.free_xy = None      # known-free at plan height and column-clear

    def build_planar(self, z_lo: float, z_hi: float, plan_z: float) -> None:
        """Cache 2D traversability masks over the robot's height column."""
        k0 = int(max(np.floor((z_lo - self.origin[2]) / self.resolution), 0))
        k1 = int(min(np.ceil((z_hi - self.origin[2]) / self.resolution),
                     self.dims[2]))
        k1 = max(k1, k0 + 1)
        kp = int(np.clip((plan_z - self.origin[2]) / self.resolution, 0,
                         self.dims[2] - 1))
        column = self.classes[:, :, k0:k1]
        blocked = (column == OCCUPIED).any(axis=2)
        free = (self.classes[:, :, kp] == FREE) & ~blocked
        blocked.setflags(write=False)
        free.setflags(write=False)
        self.plan_z = plan_z
        self.blocked_xy = blocked
        self.free_xy = free

    def world_to_voxel(self, p):
        p = np.asarray(p, dtype=float)
        return np.floor((p - self.origin) / self.resolution).astype(np.int64)

    def voxel_center(self, v):
        v = np.asarray(v, dtype=float)
        return self.origin + (v + 0.5) * self.resolution

    def in_bounds(self, v) -> bool:
        v = np.asarray(v)
        return bool(np.all(v >= 0) and np.all(v < self.dims))

    def class_at(self, v) -> int:
        v = tuple(np.asarray(v, dtype=np.int64))
        if not self.in_bounds(v):
            raise GridError(f"voxel {v} out of bounds")
        return int(self.classes[v])

    def class_at_point(self, p) -> int:
        return self.class_at(self.world_to_voxel(p))

    def visible_mask(self, eye, targets, blocked_class=OCCUPIED) -> np.ndarray:
        """Line-of-sight from `eye` to each target point, blocked by one class.

        Unknown space is transparent. A blocking voxel equal to the target's
        own voxel does not occlude it. Implemented as an emission-free
        lockstep walk so large target batches stay cheap.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        n = len(targets)
        if n == 0:
            return np.zeros(0, dtype=bool)
        eye = np.asarray(eye, dtype=float)
        dims = self.dims
        res = self.resolution
        d = targets - eye[None, :]
        v = np.floor((eye - self.origin) / res).astype(np.int64)
        v = np.repeat(v[None, :], n, axis=0)
        v_end = np.floor((targets - self.origin) / res).astype(np.int64)
        step = np.sign(d).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_delta = np.where(d != 0.0, res / np.abs(d), np.inf)
            next_boundary = self.origin[None, :] + (v + (step > 0)) * res
            t_max = np.where(d != 0.0, (next_boundary - eye[None, :]) / d, np.inf)

        flat_classes = self.classes.ravel()
        sx = int(dims[1]) * int(dims[2])
        sy = int(dims[2])
        active = np.ones(n, dtype=bool)
        blocked = np.zeros(n, dtype=bool)
        ids = np.arange(n)
        max_iter = int(dims.sum()) * 4 + 8
        for _ in range(max_iter):
            if not active.any():
                break
            in_bounds = ((v >= 0) & (v < dims[None, :])).all(axis=1)
            at_end = (v == v_end).all(axis=1)
            look = active & in_bounds & ~at_end
            if look.any():
                flat = v[look, 0] * sx + v[look, 1] * sy + v[look, 2]
                hit = flat_classes[flat] == blocked_class
                sub = ids[look][hit]
                blocked[sub] = True
                active[sub] = False
            done = at_end | (t_max.min(axis=1) >= 1.0)
            active &= ~done
            if not active.any():
                break
            axis = np.argmin(t_max, axis=1)
            rows = ids[active]
            cols = axis[active]
            v[rows, cols] += step[rows, cols]
            t_max[rows, cols] += t_delta[rows, cols]
        return ~blocked
