"""Object-centric semantic target mapping.

Each detected target gets a local probabilistic voxel model refined from
multi-view measurements: measurements are associated by box overlap, grouped
into angular observation sectors, scored against the current model extent,
validated as Bernoulli trials per sector, and periodically re-projected into
the retained per-sector keyframes to reward voxels inside the keyframe mask
and penalize those outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SemanticConfig
from .geometry import Box, Pose
from .grid import traverse_segments
from .sensor import Measurement, SensorConfig, project_batch


class SemanticError(ValueError):
    pass


def mask_score(v_mask: float, v_model: float, v_inter: float) -> float:
    """Overlap-over-largest-box ratio weighted by the mask volume."""
    if v_mask <= 0 or v_model <= 0:
        raise SemanticError("mask/model volumes must be positive")
    return (v_inter / max(v_mask, v_model)) * v_mask


def support_box(box: Box, min_extent: float = 0.1) -> Box:
    """Grow degenerate axes of a point-cloud extent to one voxel width.

    Non-degenerate axes are untouched, so volumetric boxes keep exact values.
    """
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    grow = np.maximum(min_extent - (hi - lo), 0.0) / 2.0
    return Box(tuple(lo - grow), tuple(hi + grow))


def box_mask_score(mask_box: Box, model_box: Box, min_extent: float = 0.1) -> float:
    a = support_box(mask_box, min_extent)
    b = support_box(model_box, min_extent)
    return mask_score(a.volume, b.volume, a.intersection_volume(b))


def mask_columns(cloud, pose: Pose, sensor: SensorConfig, patch: float):
    """Per-azimuth-column vertical silhouette intervals of a measurement cloud.

    Every point stands for a `patch`-sized surface sample; its pixel footprint
    widens the column interval, which closes sampling gaps. Returns (lo, hi)
    int arrays of length `w_img`; lo > hi marks an empty column.
    """
    lo = np.full(sensor.w_img, np.iinfo(np.int32).max, dtype=np.int32)
    hi = np.full(sensor.w_img, np.iinfo(np.int32).min, dtype=np.int32)
    local = pose.to_sensor(np.asarray(cloud, dtype=float))
    rho = np.hypot(local[:, 0], local[:, 1])
    ok = rho > 1e-9
    ix, iy = project_batch(local[ok], sensor)
    rho = rho[ok]
    w_half = np.ceil(sensor.w_img * patch / (2.0 * math.pi * rho) / 2.0).astype(int) + 1
    h_half = np.ceil(sensor.f_y * patch / rho / 2.0).astype(int) + 1
    ixi = ix.astype(int)
    iyi = iy.astype(int)
    for cx, cy, wh, hh in zip(ixi, iyi, w_half, h_half):
        cols = np.arange(cx - wh, cx + wh + 1) % sensor.w_img
        np.minimum.at(lo, cols, cy - hh)
        np.maximum.at(hi, cols, cy + hh)
    return lo, hi


@dataclass
class Keyframe:
    pose: Pose
    score: float
    mask_box: Box
    col_lo: np.ndarray   # per-column silhouette bottom row (int)
    col_hi: np.ndarray   # per-column silhouette top row; lo > hi means empty

    def covers(self, ix: int, iy: float, w_half: int, h_half: int, w_img: int) -> bool:
        cols = np.arange(ix - w_half, ix + w_half + 1) % w_img
        return bool(
            np.any(
                (self.col_lo[cols] <= iy + h_half) & (self.col_hi[cols] >= iy - h_half)
            )
        )


@dataclass
class ObservationSet:
    sector: int
    total_obs: int = 0
    valid_obs: int = 0
    keyframe: Keyframe | None = None
    best_score: float = -math.inf

    @property
    def validity(self) -> float:
        return self.valid_obs / self.total_obs if self.total_obs else 0.0


@dataclass
class DenseObjectMap:
    object_id: int
    label: str
    points: np.ndarray
    voxel_counts: dict


class ObjectModel:
    """Coarse-to-fine voxel model centered on one target object."""

    def __init__(self, model_id: int, label: str, center, cfg: SemanticConfig,
                 created_tick: int = 0):
        self.id = model_id
        self.label = label
        self.cfg = cfg
        self.center = np.asarray(center, dtype=float)
        self.res = cfg.model_resolution
        self.half = cfg.radius
        self.n = max(int(round(2.0 * self.half / self.res)), 2)
        self.origin = self.center - self.half
        self.belief = np.full((self.n,) * 3, cfg.belief_init, dtype=np.float32)
        self.touched = np.zeros((self.n,) * 3, dtype=bool)
        self.obs_sets = [ObservationSet(m) for m in range(cfg.sectors)]
        self.created_tick = created_tick
        self.skipped_center_poses = 0
        self.dense_points: dict = {}

    # -- voxel helpers ------------------------------------------------------

    def world_to_voxel(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.floor((pts - self.origin) / self.res).astype(np.int64)

    def voxel_center(self, v):
        return self.origin + (np.asarray(v, dtype=float) + 0.5) * self.res

    def in_bounds(self, idx):
        return np.all((idx >= 0) & (idx < self.n), axis=-1)

    def confident_mask(self) -> np.ndarray:
        return self.belief >= self.cfg.belief_confident

    def confident_voxels(self) -> np.ndarray:
        return np.argwhere(self.confident_mask())

    def bbox(self) -> Box | None:
        """Extent of the model's supported voxels (confident if any, else touched)."""
        mask = self.confident_mask()
        if not mask.any():
            mask = self.touched
        if not mask.any():
            return None
        idx = np.argwhere(mask)
        lo = self.origin + idx.min(axis=0) * self.res
        hi = self.origin + (idx.max(axis=0) + 1) * self.res
        return Box(tuple(lo), tuple(hi))

    def sector_of(self, pose: Pose):
        """Angular sector containing a capture pose; None at the exact center."""
        dx, dy = pose.x - self.center[0], pose.y - self.center[1]
        if dx == 0.0 and dy == 0.0:
            return None
        width = 2.0 * math.pi / self.cfg.sectors
        az = math.atan2(dy, dx)
        return int(((az + width / 2.0) % (2.0 * math.pi)) / width) % self.cfg.sectors

    def sector_centerline(self, sector: int) -> float:
        return sector * 2.0 * math.pi / self.cfg.sectors

    # -- updates --------------------------------------------------------------

    def _bump(self, idx, delta):
        self.belief[tuple(idx.T)] = np.clip(
            self.belief[tuple(idx.T)] + delta, self.cfg.belief_min, self.cfg.belief_max
        )

    def integrate_cloud(self, cloud):
        idx = self.world_to_voxel(cloud)
        idx = idx[self.in_bounds(idx)]
        if len(idx) == 0:
            return
        idx = np.unique(idx, axis=0)
        self._bump(idx, self.cfg.p_inc)
        self.touched[tuple(idx.T)] = True

    def raycast_back(self, sensor: SensorConfig):
        """Re-project supported voxels into every retained keyframe view.

        Membership in the mask is tested with a voxel-sized pixel window so a
        true surface voxel is never penalized for sub-voxel projection offsets.
        """
        idx = np.argwhere(self.touched)
        if len(idx) == 0:
            return
        centers = self.voxel_center(idx)
        blockers = self.confident_mask()
        for oset in self.obs_sets:
            kf = oset.keyframe
            if kf is None:
                continue
            eye = kf.pose.xyz
            visited, is_last, ray_id = traverse_segments(
                eye, centers, self.origin, self.res, np.array([self.n] * 3)
            )
            occluded = np.zeros(len(idx), dtype=bool)
            if len(visited):
                blocked = blockers[tuple(visited.T)] & ~is_last
                occluded[np.unique(ray_id[blocked])] = True
            vis = ~occluded
            if not vis.any():
                continue
            local = kf.pose.to_sensor(centers[vis])
            rho = np.hypot(local[:, 0], local[:, 1])
            proj_ok = rho > 1e-9
            ix, iy = project_batch(local[proj_ok], sensor)
            rho = rho[proj_ok]
            ixi = ix.astype(int) % sensor.w_img
            w_half = np.ceil(sensor.w_img * self.res / (2.0 * math.pi * rho)).astype(int)
            h_half = np.ceil(sensor.f_y * self.res / rho).astype(int)
            in_img = (iy >= 0) & (iy < sensor.h_img)
            in_mask = np.zeros(len(ixi), dtype=bool)
            for k in np.nonzero(in_img)[0]:
                in_mask[k] = kf.covers(
                    int(ixi[k]), float(iy[k]), int(w_half[k]), int(h_half[k]),
                    sensor.w_img,
                )
            vis_idx = idx[vis][proj_ok]
            self._bump(vis_idx[in_mask], self.cfg.p_inc)
            self._bump(vis_idx[in_img & ~in_mask], -self.cfg.p_dec)

    def add_dense_points(self, pts, cap_per_voxel: int = 60):
        idx = self.world_to_voxel(pts)
        ok = self.in_bounds(idx)
        for key, p in zip(map(tuple, idx[ok]), np.asarray(pts)[ok]):
            bucket = self.dense_points.setdefault(key, [])
            if len(bucket) < cap_per_voxel:
                bucket.append(p)


def associate(z: Measurement, models, t_iou: float):
    """Best same-label model by box overlap; None means a new model is needed."""
    zbox = support_box(z.bbox)
    best, best_iou = None, 0.0
    for model in models:
        if model.label != z.label:
            continue
        box = model.bbox()
        if box is None:
            continue
        iou = zbox.iou(support_box(box))
        if iou > best_iou:
            best, best_iou = model, iou
    if best is not None and best_iou >= t_iou:
        return best
    return None


def merge_models(a: ObjectModel, b: ObjectModel, t_iom: float):
    """Merge two same-label models when their extents mostly coincide.

    Returns the merged model, or None when the overlap is insufficient.
    The merged model keeps the grid frame of whichever input has more
    observations, so merging a model with itself is exact.
    """
    if a.label != b.label:
        return None
    box_a, box_b = a.bbox(), b.bbox()
    if box_a is None or box_b is None:
        return None
    if box_a.io_min(box_b) <= t_iom:
        return None
    obs_a = sum(o.total_obs for o in a.obs_sets)
    obs_b = sum(o.total_obs for o in b.obs_sets)
    keeper, other = (a, b) if (obs_a, -a.id) >= (obs_b, -b.id) else (b, a)

    merged = ObjectModel(keeper.id, keeper.label, keeper.center, keeper.cfg,
                         created_tick=min(a.created_tick, b.created_tick))
    merged.belief = keeper.belief.copy()
    merged.touched = keeper.touched.copy()

    o_idx = np.argwhere(other.touched)
    if len(o_idx):
        centers = other.voxel_center(o_idx)
        t_idx = merged.world_to_voxel(centers)
        ok = merged.in_bounds(t_idx)
        o_idx, t_idx = o_idx[ok], t_idx[ok]
        both = merged.touched[tuple(t_idx.T)]
        tv = tuple(t_idx.T)
        merged.belief[tv] = np.where(
            both,
            (merged.belief[tv] + other.belief[tuple(o_idx.T)]) / 2.0,
            other.belief[tuple(o_idx.T)],
        )
        merged.touched[tv] = True

    for m, oset in enumerate(merged.obs_sets):
        ka, kb = keeper.obs_sets[m], other.obs_sets[m]
        oset.total_obs = ka.total_obs + kb.total_obs
        oset.valid_obs = ka.valid_obs + kb.valid_obs
        cands = [k.keyframe for k in (ka, kb) if k.keyframe is not None]
        oset.keyframe = max(cands, key=lambda k: k.score, default=None)
        oset.best_score = max(ka.best_score, kb.best_score)

    merged.dense_points = dict(keeper.dense_points)
    for key, pts in other.dense_points.items():
        merged.dense_points.setdefault(key, []).extend(pts)
    return merged


def recenter(model: ObjectModel, t_doc: float) -> bool:
    """Shift the grid onto the belief-weighted center of mass when it drifted.

    Returns True when the model moved. Voxels whose centers fall outside the
    shifted grid are discarded.
    """
    mask = model.confident_mask()
    if not mask.any():
        raise SemanticError("recenter needs at least one confident voxel")
    idx = np.argwhere(mask)
    weights = model.belief[tuple(idx.T)].astype(float)
    centers = model.voxel_center(idx)
    com = (centers * weights[:, None]).sum(axis=0) / weights.sum()
    if np.linalg.norm(com - model.center) <= t_doc:
        return False

    old_idx = np.argwhere(model.touched)
    old_centers = model.voxel_center(old_idx)
    old_belief = model.belief[tuple(old_idx.T)]

    model.center = com
    model.origin = com - model.half
    model.belief = np.full((model.n,) * 3, model.cfg.belief_init, dtype=np.float32)
    model.touched = np.zeros((model.n,) * 3, dtype=bool)
    new_idx = model.world_to_voxel(old_centers)
    ok = model.in_bounds(new_idx)
    model.belief[tuple(new_idx[ok].T)] = old_belief[ok]
    model.touched[tuple(new_idx[ok].T)] = True

    old_dense = model.dense_points
    model.dense_points = {}
    for pts in old_dense.values():
        arr = np.asarray(pts)
        kidx = model.world_to_voxel(arr)
        okd = model.in_bounds(kidx)
        for key, p in zip(map(tuple, kidx[okd]), arr[okd]):
            model.dense_points.setdefault(key, []).append(p)
    return True


def extract_dense(model: ObjectModel, min_pts_voxel: int) -> DenseObjectMap:
    """Dense cloud restricted to believed voxels with enough supporting points."""
    conf = model.confident_mask()
    kept, counts = [], {}
    for key, pts in sorted(model.dense_points.items()):
        idx = np.asarray(key)
        if np.any(idx < 0) or np.any(idx >= model.n) or not conf[key]:
            continue
        if len(pts) < min_pts_voxel:
            continue
        counts[key] = len(pts)
        kept.append(np.asarray(pts))
    points = np.concatenate(kept, axis=0) if kept else np.empty((0, 3))
    return DenseObjectMap(model.id, model.label, points, counts)


class ObjectMapper:
    """Owns all object models; ingests measurements and updates periodically."""

    def __init__(self, cfg: SemanticConfig, sensor: SensorConfig):
        self.cfg = cfg
        self.sensor = sensor
        self.models: list[ObjectModel] = []
        self.pending: list[tuple[int, Measurement]] = []
        self.label_volumes: dict[str, list[float]] = {}
        self.next_id = 0
        self.revision = 0  # bumped whenever models change

    def score_threshold(self, label: str) -> float:
        if self.cfg.score_threshold is not None:
            return self.cfg.score_threshold
        vols = self.label_volumes.get(label)
        if not vols:
            return 0.0
        return self.cfg.score_valid_frac * float(np.median(vols))

    def ingest(self, z: Measurement, tick: int = 0) -> ObjectModel:
        self.label_volumes.setdefault(z.label, []).append(z.bbox.volume)
        model = associate(z, self.models, self.cfg.iou_threshold)
        if model is None:
            centroid = np.asarray(z.instance_cloud).mean(axis=0)
            model = ObjectModel(self.next_id, z.label, centroid, self.cfg, tick)
            self.next_id += 1
            self.models.append(model)
        self.pending.append((model.id, z))
        return model

    def update_model(self, model: ObjectModel, batch) -> None:
        for z in batch:
            sector = model.sector_of(z.pose)
            if sector is None:
                model.skipped_center_poses += 1
                continue
            oset = model.obs_sets[sector]
            oset.total_obs += 1
            box = model.bbox() or z.bbox
            score = box_mask_score(z.bbox, box)
            valid = score > self.score_threshold(z.label)
            if valid:
                oset.valid_obs += 1
                model.integrate_cloud(z.instance_cloud)
            if score > oset.best_score:
                oset.best_score = score
                col_lo, col_hi = mask_columns(z.instance_cloud, z.pose, self.sensor, 0.08)
                oset.keyframe = Keyframe(
                    pose=z.pose, score=score, mask_box=z.bbox,
                    col_lo=col_lo, col_hi=col_hi,
                )
        for oset in model.obs_sets:
            if oset.keyframe is not None and oset.validity <= self.cfg.keyframe_keep_prob:
                oset.keyframe = None
        model.raycast_back(self.sensor)

    def update(self) -> None:
        """Fold pending measurements in, then merge and re-center."""
        if self.pending:
            by_model: dict[int, list[Measurement]] = {}
            for mid, z in self.pending:
                by_model.setdefault(mid, []).append(z)
            for model in self.models:
                if model.id in by_model:
                    self.update_model(model, by_model[model.id])
            self.pending.clear()
            self.revision += 1

        self._merge_pass()
        t_doc = self.cfg.recenter_dist_factor * self.cfg.model_resolution
        for model in self.models:
            if model.confident_mask().any():
                if recenter(model, t_doc):
                    self.revision += 1

    def _merge_pass(self) -> None:
        changed = True
        while changed:
            changed = False
            models = sorted(self.models, key=lambda m: m.id)
            for i in range(len(models)):
                for j in range(i + 1, len(models)):
                    merged = merge_models(models[i], models[j], self.cfg.merge_iomin)
                    if merged is not None:
                        self.models = [
                            m for m in self.models
                            if m.id not in (models[i].id, models[j].id)
                        ]
                        self.models.append(merged)
                        self.models.sort(key=lambda m: m.id)
                        self.revision += 1
                        changed = True
                        break
                if changed:
                    break

    def add_dense_points(self, pts) -> None:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if len(pts) == 0:
            return
        for model in self.models:
            lo = model.origin
            hi = model.origin + 2 * model.half
            sel = np.all((pts >= lo) & (pts <= hi), axis=1)
            if sel.any():
                model.add_dense_points(pts[sel])
