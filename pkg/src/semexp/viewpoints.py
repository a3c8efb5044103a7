"""Semantic and geometric viewpoint generation and upkeep.

Semantic viewpoints live on the centerline of each angular observation sector
around an object model, at the candidate distance maximizing the projected
mask area. Geometric viewpoints are sub-sampled roadmap nodes scored by the
number of visible unknown voxels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ViewpointConfig
from .geometry import Pose
from .grid import FREE, OCCUPIED, UNKNOWN, GridSnapshot, traverse_segments
from .semantic import ObjectModel
from .sensor import SensorConfig, project_batch


@dataclass(frozen=True)
class Viewpoint:
    pose: Pose
    kind: str                      # "semantic" | "geometric"
    score: float                   # mask pixels^2 or IG voxel count
    object_id: int | None = None
    sector: int | None = None
    node_id: int | None = None
    obligations: frozenset = frozenset()   # {(object_id, sector)}

    def key(self):
        return (self.kind, self.object_id, self.sector, self.node_id,
                round(self.pose.x, 6), round(self.pose.y, 6))


@dataclass
class ObsResult:
    score: int
    complete: bool
    visible_frac: float


def observation_score(pose: Pose, model: ObjectModel, snap: GridSnapshot,
                      sensor: SensorConfig, max_vox: int = 500,
                      complete_min_frac: float = 0.98) -> ObsResult:
    """Projected mask area of the model's supported voxels from a pose.

    Occlusion by the world map is separated from the model occluding itself:
    self-occluded voxels simply do not contribute, while world-occluded ones
    lower the visible fraction used by the sampling rules. The observation is
    complete when at least `complete_min_frac` of the voxels fit the vertical
    image extent and the range limit (the slack absorbs stray fringe voxels
    from re-binning quantization).
    """
    idx = model.confident_voxels()
    if len(idx) == 0:
        return ObsResult(0, False, 0.0)
    box = model.bbox()
    if box is not None and box.contains_xy(pose.x, pose.y):
        return ObsResult(0, False, 0.0)
    if len(idx) > max_vox:
        stride = int(np.ceil(len(idx) / max_vox))
        idx = idx[::stride]
    centers = model.voxel_center(idx)
    eye = pose.xyz

    delta = centers - eye[None, :]
    dist = np.linalg.norm(delta, axis=1)

    # vertical image extent of the voxel tops/bottoms decides completeness
    local = pose.to_sensor(centers)
    rho = np.hypot(local[:, 0], local[:, 1])
    if np.any(rho < 1e-9):
        return ObsResult(0, False, 0.0)
    half = model.res / 2.0
    iy_top = sensor.f_y * (-(local[:, 2] + half) / rho) + sensor.y_0
    iy_bot = sensor.f_y * (-(local[:, 2] - half) / rho) + sensor.y_0
    fits = (iy_top >= 0) & (iy_bot < sensor.h_img) & (dist <= sensor.max_range)
    complete = bool(fits.mean() >= complete_min_frac)

    # first blocking voxel along each sight line, classified self vs world
    visited, is_last, ray_id = traverse_segments(
        eye, centers, snap.origin, snap.resolution, snap.dims
    )
    n = len(idx)
    first_block = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    if len(visited):
        occ = (snap.classes[tuple(visited.T)] == OCCUPIED) & ~is_last
        order = np.arange(len(visited))
        np.minimum.at(first_block, ray_id[occ], order[occ])
    blocked = first_block < np.iinfo(np.int64).max
    self_block = np.zeros(n, dtype=bool)
    if blocked.any() and box is not None:
        blk_centers = snap.voxel_center(visited[first_block[blocked]])
        inflated = box.inflate(snap.resolution)
        inside = np.all(
            (blk_centers >= inflated.lo) & (blk_centers <= inflated.hi), axis=1
        )
        self_block[np.nonzero(blocked)[0][inside]] = True
    world_block = blocked & ~self_block
    visible = ~blocked
    considered = int(visible.sum() + world_block.sum())
    visible_frac = float(visible.sum() / considered) if considered else 0.0

    if not visible.any():
        return ObsResult(0, complete, visible_frac)

    # Rasterize visible voxel footprints: each cube projects (at voxel scale)
    # to the convex hull of its 8 projected corners; fill it column by column.
    offs = np.array(
        [[sx, sy, sz] for sx in (-half, half) for sy in (-half, half)
         for sz in (-half, half)]
    )
    vis_centers = centers[visible]
    corners = (vis_centers[:, None, :] + offs[None, :, :]).reshape(-1, 3)
    ix, iy = project_batch(pose.to_sensor(corners), sensor)
    ix = ix.reshape(-1, 8)
    iy = iy.reshape(-1, 8)
    buf = np.zeros((sensor.h_img, sensor.w_img), dtype=bool)
    w = sensor.w_img
    h = sensor.h_img
    for k in range(len(vis_centers)):
        ex = ix[k]
        if ex.max() - ex.min() > w / 2.0:  # footprint wraps the panorama seam
            ex = np.where(ex > w / 2.0, ex - w, ex)
        _fill_hull(buf, ex, iy[k], w, h)
    return ObsResult(int(buf.sum()), complete, visible_frac)


def _fill_hull(buf, xs, ys, w, h):
    """Fill the convex hull of projected points into the panorama buffer."""
    pts = sorted(zip(xs.tolist(), ys.tolist()))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    low, high = [], []
    for p in pts:
        while len(low) >= 2 and cross(low[-2], low[-1], p) <= 0:
            low.pop()
        low.append(p)
        while len(high) >= 2 and cross(high[-2], high[-1], p) >= 0:
            high.pop()
        high.append(p)
    lx = np.array([p[0] for p in low])
    ly = np.array([p[1] for p in low])
    hx = np.array([p[0] for p in high])
    hy = np.array([p[1] for p in high])

    c0 = int(round(pts[0][0]))
    c1 = int(round(pts[-1][0]))
    if c1 < c0:
        return
    cols = np.arange(c0, c1 + 1)
    mids = np.clip(cols + 0.5, pts[0][0], pts[-1][0])
    ya = np.interp(mids, lx, ly)
    yb = np.interp(mids, hx, hy)
    y0s = np.clip(np.round(np.minimum(ya, yb)).astype(int), 0, h)
    y1s = np.clip(np.round(np.maximum(ya, yb)).astype(int), 0, h)
    for c, y0, y1 in zip(cols % w, y0s, y1s):
        if y1 > y0:
            buf[y0:y1, c] = True


def information_gain(pose: Pose, snap: GridSnapshot, sensor: SensorConfig,
                     slab_half: int | None = None, stride: int = 1) -> int:
    """Count of unknown voxels within range and vertical FOV, unoccluded.

    `slab_half` restricts counting to voxel layers near the pose height and
    `stride` subsamples candidates; both default to the exact definition.
    """
    eye = pose.xyz
    res = snap.resolution
    lo = snap.world_to_voxel(eye - sensor.max_range)
    hi = snap.world_to_voxel(eye + sensor.max_range) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, snap.dims)
    if slab_half is not None:
        zc = int((eye[2] - snap.origin[2]) / res)
        lo[2] = max(zc - slab_half, 0)
        hi[2] = min(zc + slab_half + 1, int(snap.dims[2]))
    sub = snap.classes[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == UNKNOWN
    idx = np.argwhere(sub) + lo
    if stride > 1:
        idx = idx[::stride]
    if len(idx) == 0:
        return 0
    centers = snap.voxel_center(idx)
    delta = centers - eye[None, :]
    dist = np.linalg.norm(delta, axis=1)
    horiz = np.hypot(delta[:, 0], delta[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        elev_ok = np.abs(np.arctan2(delta[:, 2], horiz)) <= sensor.v_fov / 2.0
    keep = (dist <= sensor.max_range) & (dist > 0) & (horiz > 0) & elev_ok
    if not keep.any():
        return 0
    vis = snap.visible_mask(eye, centers[keep])
    return int(vis.sum())


def information_gain_scan(pose: Pose, snap: GridSnapshot, sensor: SensorConfig,
                          azimuths: int = 60, elevations: int = 5) -> int:
    """Sensor-bundle estimate of visible unknown voxels.

    Casts a coarse panoramic ray lattice through the snapshot, stopping at
    known-occupied cells, and counts the distinct unknown voxels the rays
    touch. Cheaper than the exact per-voxel count and proportional to it.
    """
    eye = pose.xyz
    elev = np.linspace(-sensor.v_fov / 2.0, sensor.v_fov / 2.0, elevations)
    azim = np.linspace(0.0, 2.0 * math.pi, azimuths, endpoint=False)
    e, a = np.meshgrid(elev, azim, indexing="ij")
    ce = np.cos(e.ravel())
    dirs = np.stack([ce * np.cos(a.ravel()), ce * np.sin(a.ravel()),
                     np.sin(e.ravel())], axis=1)
    ends = eye[None, :] + dirs * sensor.max_range

    dims = snap.dims
    res = snap.resolution
    n = len(ends)
    d = ends - eye[None, :]
    v = np.floor((eye - snap.origin) / res).astype(np.int64)
    v = np.repeat(v[None, :], n, axis=0)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0.0, res / np.abs(d), np.inf)
        nb = snap.origin[None, :] + (v + (step > 0)) * res
        t_max = np.where(d != 0.0, (nb - eye[None, :]) / d, np.inf)

    flat_classes = snap.classes.ravel()
    sx = int(dims[1]) * int(dims[2])
    sy = int(dims[2])
    ids = np.arange(n)
    active = np.ones(n, dtype=bool)
    unknown_cells = []
    max_iter = int(dims.sum()) * 4 + 8
    for _ in range(max_iter):
        if not active.any():
            break
        in_bounds = ((v >= 0) & (v < dims[None, :])).all(axis=1)
        live = active & in_bounds
        if live.any():
            flat = v[live, 0] * sx + v[live, 1] * sy + v[live, 2]
            cls = flat_classes[flat]
            unk = flat[cls == UNKNOWN]
            if len(unk):
                unknown_cells.append(unk)
            stop_hit = ids[live][cls == OCCUPIED]
            active[stop_hit] = False
        active &= in_bounds  # rays start inside; leaving the grid ends them
        active &= t_max.min(axis=1) < 1.0
        if not active.any():
            break
        axis = np.argmin(t_max, axis=1)
        rows = ids[active]
        cols = axis[active]
        v[rows, cols] += step[rows, cols]
        t_max[rows, cols] += t_delta[rows, cols]
    if not unknown_cells:
        return 0
    return int(len(np.unique(np.concatenate(unknown_cells))))


def covered_frontiers(pose: Pose, frontier_voxels, snap: GridSnapshot,
                      sensor: SensorConfig, range_frac: float = 0.6) -> set:
    """Frontier cells a viewpoint would observe (range, FOV, occlusion).

    Coverage uses a reduced range: clearing a frontier means observing the
    unknown space behind it, so cells right at the sensing horizon do not
    count as covered.
    """
    if not frontier_voxels:
        return set()
    cells = sorted(frontier_voxels)
    centers = snap.voxel_center(np.asarray(cells))
    eye = pose.xyz
    delta = centers - eye[None, :]
    dist = np.linalg.norm(delta, axis=1)
    horiz = np.hypot(delta[:, 0], delta[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        elev_ok = np.abs(np.arctan2(delta[:, 2], horiz)) <= sensor.v_fov / 2.0
    keep = (dist <= sensor.max_range * range_frac) & elev_ok & (dist > 0)
    out = set()
    if keep.any():
        vis = snap.visible_mask(eye, centers[keep])
        for cell, v in zip(np.asarray(cells)[keep], vis):
            if v:
                out.add(tuple(cell))
    return out


# -- semantic viewpoints ------------------------------------------------------


def sample_sector_viewpoint(model: ObjectModel, sector: int, snap: GridSnapshot,
                            sensor: SensorConfig, cfg: ViewpointConfig,
                            plan_z: float):
    """Best centerline candidate for one observation sector, or None."""
    ang = model.sector_centerline(sector)
    best = None
    d = cfg.r_min
    while d <= model.cfg.radius + 1e-9:
        x = model.center[0] + d * math.cos(ang)
        y = model.center[1] + d * math.sin(ang)
        d += cfg.step
        pose = Pose(x, y, plan_z, yaw=ang + math.pi)
        v = snap.world_to_voxel(pose.xyz)
        if not snap.in_bounds(v) or snap.classes[tuple(v)] == OCCUPIED:
            continue
        res = observation_score(pose, model, snap, sensor,
                                complete_min_frac=cfg.complete_min_frac)
        if res.score <= 0 or not res.complete:
            continue
        if res.visible_frac < cfg.occlusion_min_visible:
            continue
        if best is None or res.score > best.score:
            best = Viewpoint(
                pose=pose, kind="semantic", score=float(res.score),
                object_id=model.id, sector=sector,
                obligations=frozenset({(model.id, sector)}),
            )
    return best


PENDING, COMPLETED, UNOBSERVABLE = "pending", "completed", "unobservable"


@dataclass
class SectorState:
    status: str
    viewpoint: Viewpoint | None = None
    t_obs: float = 0.0
    best_score: float = 0.0


def _model_fingerprint(model: ObjectModel):
    conf = int(model.confident_mask().sum())
    return (round(model.center[0], 2), round(model.center[1], 2),
            round(model.center[2], 2), conf // 25)


@dataclass
class SemanticVpManager:
    sensor: SensorConfig
    cfg: ViewpointConfig
    plan_z: float
    states: dict = field(default_factory=dict)       # (obj, sector) -> SectorState
    fingerprints: dict = field(default_factory=dict)  # obj -> fingerprint

    def refresh(self, models, snap: GridSnapshot) -> None:
        """Sample/resample sector viewpoints for changed models; apply rule (b)."""
        alive = {m.id for m in models}
        for key in [k for k in self.states if k[0] not in alive]:
            del self.states[key]
        for mid in [m for m in self.fingerprints if m not in alive]:
            del self.fingerprints[mid]

        for model in models:
            if not model.confident_mask().any():
                continue
            fp = _model_fingerprint(model)
            changed = self.fingerprints.get(model.id) != fp
            self.fingerprints[model.id] = fp
            for sector in range(model.cfg.sectors):
                key = (model.id, sector)
                state = self.states.get(key)
                if state is not None and state.status == COMPLETED:
                    continue
                invalidated = False
                if state is not None and state.viewpoint is not None:
                    v = snap.world_to_voxel(state.viewpoint.pose.xyz)
                    if not snap.in_bounds(v) or snap.classes[tuple(v)] == OCCUPIED:
                        invalidated = True
                if state is None or changed or invalidated or (
                    state.status == UNOBSERVABLE
                ):
                    if state is None or changed or invalidated:
                        vp = sample_sector_viewpoint(
                            model, sector, snap, self.sensor, self.cfg, self.plan_z
                        )
                        if vp is None:
                            self.states[key] = SectorState(UNOBSERVABLE)
                        else:
                            t_obs = (
                                self.cfg.obs_threshold_abs
                                if self.cfg.obs_threshold_mode == "absolute"
                                else self.cfg.obs_threshold_rel * vp.score
                            )
                            self.states[key] = SectorState(
                                PENDING, vp, t_obs, vp.score
                            )

    def observe(self, robot_pose: Pose, models, snap: GridSnapshot) -> list:
        """Rule (a): drive-by completion when the score clears the threshold."""
        completed = []
        by_id = {m.id: m for m in models}
        for key, state in sorted(self.states.items()):
            if state.status != PENDING:
                continue
            model = by_id.get(key[0])
            if model is None:
                continue
            if robot_pose.dist_xy(
                Pose(model.center[0], model.center[1], robot_pose.z)
            ) > model.cfg.radius * 1.25:
                continue
            if model.sector_of(robot_pose) != key[1]:
                continue
            res = observation_score(robot_pose, model, snap, self.sensor,
                                    complete_min_frac=self.cfg.complete_min_frac)
            if res.score >= state.t_obs and res.complete:
                state.status = COMPLETED
                completed.append(key)
        return completed

    def pending_viewpoints(self) -> list:
        return [
            s.viewpoint for _, s in sorted(self.states.items())
            if s.status == PENDING and s.viewpoint is not None
        ]

    def counts(self):
        c = {PENDING: 0, COMPLETED: 0, UNOBSERVABLE: 0}
        for state in self.states.values():
            c[state.status] += 1
        return c


def grid_register(vps, g: float, snap: GridSnapshot | None = None,
                  plan_z: float | None = None) -> list:
    """One representative viewpoint per 2D cell, carrying merged obligations."""
    if g <= 0:
        raise ValueError("registration cell must be positive")
    cells: dict[tuple, list] = {}
    for vp in vps:
        key = (math.floor(vp.pose.x / g), math.floor(vp.pose.y / g))
        cells.setdefault(key, []).append(vp)
    out = []
    for key in sorted(cells):
        members = cells[key]
        best = max(members, key=lambda v: v.score)
        obligations = frozenset().union(*[m.obligations for m in members])
        cx, cy = (key[0] + 0.5) * g, (key[1] + 0.5) * g
        pose = Pose(cx, cy, best.pose.z if plan_z is None else plan_z, best.pose.yaw)
        usable = True
        if snap is not None:
            v = snap.world_to_voxel(pose.xyz)
            usable = snap.in_bounds(v) and snap.classes[tuple(v)] != OCCUPIED
        if not usable:
            pose = best.pose
        out.append(replace(best, pose=pose, obligations=obligations))
    return out


# -- geometric viewpoints -----------------------------------------------------


def unknown_density_map(snap: GridSnapshot, slab_half: int, z: float):
    """2D prefix sums of unknown-voxel counts near the plan height."""
    zc = int((z - snap.origin[2]) / snap.resolution)
    z0 = max(zc - slab_half, 0)
    z1 = min(zc + slab_half + 1, int(snap.dims[2]))
    density = (snap.classes[:, :, z0:z1] == UNKNOWN).sum(axis=2)
    prefix = np.zeros((density.shape[0] + 1, density.shape[1] + 1), dtype=np.int64)
    prefix[1:, 1:] = density.cumsum(axis=0).cumsum(axis=1)
    return prefix


def _window_sum(prefix, x0, x1, y0, y1):
    x0 = max(x0, 0)
    y0 = max(y0, 0)
    x1 = min(x1, prefix.shape[0] - 1)
    y1 = min(y1, prefix.shape[1] - 1)
    if x0 >= x1 or y0 >= y1:
        return 0
    return int(prefix[x1, y1] - prefix[x0, y1] - prefix[x1, y0] + prefix[x0, y0])


def subsample_geometric(prm, snap: GridSnapshot, sensor: SensorConfig,
                        cfg: ViewpointConfig, lph, plan_z: float) -> list:
    """One candidate node per density-control cell, scored by information gain.

    Within each cell the node with the highest local unknown density is kept,
    then its exact gain is computed; nodes without any nearby unknown space
    are skipped outright.
    """
    x0, y0, x1, y1 = lph
    cell = cfg.vp_subsample_cell
    slab = cfg.ig_slab_half if cfg.ig_slab_half is not None else 3
    prefix = unknown_density_map(snap, slab, plan_z)
    res = snap.resolution
    win = int(round(2.0 / res))  # 2 m proxy window

    best_per_cell: dict[tuple, tuple] = {}
    for nid, (x, y) in sorted(prm.pos.items()):
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            continue
        vi = snap.world_to_voxel((x, y, plan_z))
        proxy = _window_sum(
            prefix, int(vi[0]) - win, int(vi[0]) + win,
            int(vi[1]) - win, int(vi[1]) + win,
        )
        if proxy <= 0:
            continue
        key = (math.floor(x / cell), math.floor(y / cell))
        cur = best_per_cell.get(key)
        if cur is None or (proxy, -nid) > (cur[2], -cur[0]):
            best_per_cell[key] = (nid, (x, y), proxy)

    out = []
    for key in sorted(best_per_cell):
        nid, (x, y), _ = best_per_cell[key]
        pose = Pose(x, y, plan_z, 0.0)
        if cfg.ig_mode == "scan":
            ig = information_gain_scan(pose, snap, sensor,
                                       cfg.ig_scan_azimuths,
                                       cfg.ig_scan_elevations)
        else:
            ig = information_gain(
                pose, snap, sensor, slab_half=cfg.ig_slab_half,
                stride=cfg.ig_stride,
            )
        if ig > 0:
            out.append(Viewpoint(pose=pose, kind="geometric", score=float(ig),
                                 node_id=nid))
    return out
