"""Deterministic closed-loop simulation: sense, map, plan, move, log, score.

One `Simulation` owns all mutable state for a run. Every random draw derives
from the run seed plus the tick index, so identical seeds give identical runs
down to the log bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .frontiers import RegionGrid, detect_frontiers
from .fsm import EXECUTING, EXPLORING, RECOVERING, FsmState, fsm_tick
from .geometry import Pose, wrap_angle
from .grid import VoxelGrid
from .planner import PlanDecision, global_step, lgs_step, lph_box
from .prm import PrmGraph
from .scenario import ScenarioSpec, World, apply_tuning
from .semantic import ObjectMapper, extract_dense
from .sensor import cluster_closest, simulate_detection, simulate_scan, Measurement, project_batch
from .viewpoints import SemanticVpManager, grid_register, subsample_geometric

METHODS = ("pdls", "lgs", "no_agc", "no_sm")


@dataclass
class RunMetrics:
    scenario: str
    method: str
    seed: int
    ticks: int = 0
    runtime_s: float = 0.0
    path_length_m: float = 0.0
    map_completeness_pct: float = 0.0
    vp_completeness_pct: float = 0.0
    vp_sectors_expected: int = 0
    vp_sectors_completed: int = 0
    recover_count: int = 0
    collisions: int = 0
    complete: bool = False
    blocked_regions: int = 0
    object_metrics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema": 1,
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "ticks": self.ticks,
            "runtime_s": round(self.runtime_s, 6),
            "path_length_m": self.path_length_m,
            "map_completeness_pct": self.map_completeness_pct,
            "vp_completeness_pct": self.vp_completeness_pct,
            "vp_sectors_expected": self.vp_sectors_expected,
            "vp_sectors_completed": self.vp_sectors_completed,
            "recover_count": self.recover_count,
            "collisions": self.collisions,
            "complete": self.complete,
            "blocked_regions": self.blocked_regions,
            "object_metrics": self.object_metrics,
        }


def sector_observability(world: World, cfg: SystemConfig):
    """Ground-truth oracle: which (object, sector) pairs are observable at all.

    A sector counts as observable when some centerline candidate stands in
    reachable free space, sees nearly all of the object surface that the
    object itself would allow, and fits it inside the image and range limits.
    """
    from .sensor import visible_points

    vp_cfg = cfg.viewpoints
    sem_cfg = cfg.semantic
    sensor = world.spec.sensor
    z_s = world.spec.start.z
    out = {}
    for obj in world.objects:
        center = obj.box.center
        samples = obj.surface_points
        solo = _SoloWorld(obj, world)
        for sector in range(sem_cfg.sectors):
            ang = sector * 2.0 * math.pi / sem_cfg.sectors
            ok = False
            d = vp_cfg.r_min
            while d <= sem_cfg.radius + 1e-9 and not ok:
                x = center[0] + d * math.cos(ang)
                y = center[1] + d * math.sin(ang)
                d += vp_cfg.step
                eye = np.array([x, y, z_s])
                if not world.spec.bounds.contains((x, y, z_s)):
                    continue
                if world.column_collides(x, y):
                    continue
                v = world.world_to_voxel(eye)
                if not (0 <= v[0] < world.dims[0] and 0 <= v[1] < world.dims[1]):
                    continue
                if not world.reachable_mask[tuple(v)]:
                    continue
                vis_self = visible_points(solo, eye, samples)
                if vis_self.sum() == 0:
                    continue
                vis_world = visible_points(world, eye, samples)
                frac = vis_world.sum() / vis_self.sum()
                if frac < vp_cfg.occlusion_min_visible:
                    continue
                pts = samples[vis_self]
                delta = pts - eye[None, :]
                dist = np.linalg.norm(delta, axis=1)
                rho = np.hypot(delta[:, 0], delta[:, 1])
                iy = sensor.f_y * (-delta[:, 2] / np.maximum(rho, 1e-9)) + sensor.y_0
                fits = (iy >= 0) & (iy < sensor.h_img) & (dist <= sensor.max_range)
                if fits.mean() >= vp_cfg.complete_min_frac:
                    ok = True
            out[(obj.index, sector)] = ok
    return out


class _SoloWorld:
    """Visibility shim holding only one object's box."""

    def __init__(self, obj, world):
        self.solid_lo = np.array([obj.box.lo])
        self.solid_hi = np.array([obj.box.hi])
        self.spec = world.spec
        self.resolution = world.resolution


def observable_surface(world: World, obj) -> np.ndarray:
    """Truth samples on faces a sensor at the robot's height could ever see."""
    z_s = world.spec.start.z
    pts = obj.surface_points
    lo, hi = np.asarray(obj.box.lo), np.asarray(obj.box.hi)
    keep = np.ones(len(pts), dtype=bool)
    keep &= ~np.isclose(pts[:, 2], lo[2])           # resting face
    if z_s <= hi[2]:
        keep &= ~np.isclose(pts[:, 2], hi[2])       # top face seen only from above
    return pts[keep]


class Simulation:
    def __init__(self, spec: ScenarioSpec, cfg: SystemConfig | None = None,
                 seed: int | None = None, method: str = "pdls"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.cfg = apply_tuning(cfg or SystemConfig(), spec)
        self.seed = spec.seed if seed is None else seed
        self.method = method
        self.aggressive = method != "no_agc"
        self.allow_recovery = method != "no_sm"

        self.world = World(spec, self.cfg.mapping)
        self.grid = VoxelGrid(self.world.origin, self.world.dims, self.cfg.mapping)
        self.sensor = spec.sensor
        self.mapper = ObjectMapper(self.cfg.semantic, self.sensor)
        self.sem_manager = SemanticVpManager(self.sensor, self.cfg.viewpoints,
                                             plan_z=spec.start.z)
        self.regions = RegionGrid(spec.bounds, self.cfg.harness.region_grid)
        self.prm = PrmGraph(self.cfg.prm, z=spec.start.z)
        self.fsm = FsmState()
        self.robot = spec.start
        self.rng = np.random.default_rng(self.seed)
        self.tick = 0
        self.path_length = 0.0
        self.collisions = 0
        self.complete = False
        self.halted_wedge = False
        self.trajectory: list = []       # log lines
        self.region_log: list = []
        self.last_snap = None
        self.geometric_vps: list = []
        self.background: dict = {}
        self._slab_z = int((spec.start.z - self.world.origin[2])
                           / self.cfg.mapping.resolution)
        self._region_fingerprints: dict = {}
        self._gate_offsets = self._make_gate_offsets()

    # -- small helpers ------------------------------------------------------

    def _make_gate_offsets(self):
        res = self.cfg.mapping.resolution
        safe = self.cfg.fsm.safe_dist
        r = int(math.ceil(safe / res))
        return [(dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)
                if math.hypot(dx, dy) * res <= safe + 1e-9]

    def _column_range(self):
        res = self.cfg.mapping.resolution
        k0 = max(int(0.2 / res), 0)
        k1 = min(int((self.spec.start.z + 0.2) / res) + 1, int(self.world.dims[2]))
        return k0, max(k1, k0 + 1)

    def gate_ok(self, x: float, y: float) -> bool:
        """Live-map known-free check of the robot ball at (x, y)."""
        g = self.grid
        k0, k1 = self._column_range()
        lo_occ = g._lo_occ
        xi = int((x - g.origin[0]) / g.resolution)
        yi = int((y - g.origin[1]) / g.resolution)
        zp = self._slab_z
        for dx, dy in self._gate_offsets:
            qx, qy = xi + dx, yi + dy
            if not (0 <= qx < g.dims[0] and 0 <= qy < g.dims[1]):
                return False
            col = g.log_odds[qx, qy, k0:k1]
            if (col >= lo_occ).any():
                return False
            if not g.touched[qx, qy, zp] or g.log_odds[qx, qy, zp] >= lo_occ:
                return False
        return True

    def snapshot(self):
        snap = self.grid.snapshot()
        k0, k1 = self._column_range()
        res = self.cfg.mapping.resolution
        snap.build_planar(self.world.origin[2] + k0 * res,
                          self.world.origin[2] + k1 * res,
                          self.spec.start.z)
        return snap

    # -- per-tick stages ----------------------------------------------------

    def sense(self):
        scan = simulate_scan(self.world, self.robot, self.sensor,
                             rng_seed=self.seed * 1_000_003 + self.tick)
        if not scan.degenerate:
            self.grid.integrate_scan(scan.origin, scan.points, scan.is_max_range)
            hits = scan.points[~scan.is_max_range]
            if len(hits):
                self.mapper.add_dense_points(hits)
                self._bucket_background(hits)
        return scan

    def _bucket_background(self, pts, cap=4):
        res = self.cfg.mapping.resolution
        keys = np.floor((pts - self.world.origin) / res).astype(np.int64)
        for key, p in zip(map(tuple, keys), pts):
            bucket = self.background.setdefault(key, [])
            if len(bucket) < cap:
                bucket.append(p)

    def detect(self):
        measurements = simulate_detection(
            self.world, self.robot, self.sensor,
            rng_seed=self.seed * 7_777_777 + self.tick,
        )
        sem = self.cfg.semantic
        for z in measurements:
            cloud = cluster_closest(z.instance_cloud, z.pose, sem.cluster_eps,
                                    sem.cluster_min_pts, sem.ground_z)
            if len(cloud) < sem.min_cloud_points:
                continue
            if len(cloud) != len(z.instance_cloud):
                ix, iy = project_batch(z.pose.to_sensor(cloud), self.sensor)
                mask = set(zip(ix.astype(int).tolist(), iy.astype(int).tolist()))
                z = Measurement(z.label, z.pose, mask, cloud)
            self.mapper.ingest(z, tick=self.tick)

    def inject_pseudo_collision(self):
        """Phantom occupied blob ahead of the robot (map only, not truth)."""
        h = self.cfg.harness
        cx = self.robot.x + 0.5 * math.cos(self.robot.yaw)
        cy = self.robot.y + 0.5 * math.sin(self.robot.yaw)
        res = self.cfg.mapping.resolution
        r = h.inject_radius
        k0, k1 = self._column_range()
        voxels = []
        steps = int(r / res) + 1
        for dx in range(-steps, steps + 1):
            for dy in range(-steps, steps + 1):
                if math.hypot(dx, dy) * res > r:
                    continue
                xi = int((cx - self.world.origin[0]) / res) + dx
                yi = int((cy - self.world.origin[1]) / res) + dy
                for zi in range(k0, k1):
                    voxels.append((xi, yi, zi))
        self.grid.mark_occupied(voxels)
        self.trajectory.append(f"E {self.tick} inject {cx:.3f} {cy:.3f}")

    def plan_round(self):
        snap = self.snapshot()
        self.last_snap = snap
        h = self.cfg.harness

        horizon = lph_box(self.robot, self.cfg.prm.lph_half_extent)
        self.prm.maintain(snap, self._clip_box(horizon),
                          np.random.default_rng(self.seed * 11 + self.tick),
                          aggressive=self.aggressive)

        slab = self._slab_z if h.frontier_mode == "slab" else None
        frontiers = detect_frontiers(snap, slab_z=slab,
                                     min_cluster=h.frontier_min_cluster)
        self.sem_manager.refresh(self.mapper.models, snap)
        registered = grid_register(self.sem_manager.pending_viewpoints(),
                                   self.cfg.viewpoints.register_cell, snap)
        self.regions.refresh(snap, frontiers, registered)
        self._drop_stuck_regions()

        self.geometric_vps = subsample_geometric(
            self.prm, snap, self.sensor, self.cfg.viewpoints,
            self._clip_box(horizon), self.spec.start.z,
        )

        def plan_fn() -> PlanDecision:
            if self.method == "lgs":
                return lgs_step(self.robot, self.regions, self.geometric_vps,
                                snap, self.prm, self.mapper.models,
                                self.sem_manager, self.cfg, self.spec.v,
                                self.spec.omega, self.aggressive)
            return global_step(self.robot, self.regions, self.geometric_vps,
                               snap, self.prm, self.cfg, self.sensor,
                               self.spec.v, self.spec.omega, self.aggressive)

        fsm_tick(self.fsm, self.tick, snap, plan_fn, self.cfg.fsm.safe_dist,
                 self.cfg.fsm.t_back, allow_recovery=self.allow_recovery)
        if self.fsm.mode == EXPLORING and self.fsm.waypoints is None \
                and self.fsm.recovery is None and self.regions.all_inactive():
            self.complete = True
        if self.fsm.halted:
            self.halted_wedge = True

        for region in self.regions.regions:
            self.region_log.append(
                f"R {self.tick} {region.region_id} {int(region.active)} "
                f"{len(region.frontiers)} {len(region.semantic_vps)} "
                f"{region.blocked_streak}"
            )

    def _clip_box(self, box):
        b = self.spec.bounds
        return (max(box[0], b.lo[0]), max(box[1], b.lo[1]),
                min(box[2], b.hi[0]), min(box[3], b.hi[1]))

    def _drop_stuck_regions(self):
        patience = self.cfg.harness.blocked_region_patience
        for region in self.regions.regions:
            fp = (len(region.frontiers), len(region.semantic_vps))
            prev = self._region_fingerprints.get(region.region_id)
            self._region_fingerprints[region.region_id] = fp
            if region.blocked_streak > patience and prev == fp:
                if not region.dropped:
                    region.dropped = True
                    self.trajectory.append(
                        f"E {self.tick} region_dropped {region.region_id}"
                    )

    def move(self):
        """Advance along the recovery path or the committed plan, gated."""
        fsm = self.fsm
        dt = self.cfg.harness.dt
        recovery_active = bool(fsm.recovery)
        wps = fsm.recovery if recovery_active else fsm.waypoints
        if not wps:
            return
        x, y = self.robot.x, self.robot.y
        # drop waypoints already reached
        while wps and math.hypot(wps[0][0] - x, wps[0][1] - y) < 0.06:
            wps.pop(0)
        if not wps:
            if recovery_active:
                fsm.recovery = None
            else:
                fsm.waypoints = None
            return
        tx, ty = wps[0][0], wps[0][1]
        desired = math.atan2(ty - y, tx - x)
        yaw_err = wrap_angle(desired - self.robot.yaw)
        max_turn = self.spec.omega * dt
        if abs(yaw_err) > self.cfg.harness.yaw_gate:
            new_yaw = self.robot.yaw + max(-max_turn, min(max_turn, yaw_err))
            self.robot = Pose(x, y, self.robot.z, new_yaw)
            return
        new_yaw = self.robot.yaw + max(-max_turn, min(max_turn, yaw_err))
        dist = math.hypot(tx - x, ty - y)
        step = min(self.spec.v * dt, dist)
        nx = x + step * math.cos(desired)
        ny = y + step * math.sin(desired)
        if not recovery_active and not self.gate_ok(nx, ny):
            fsm.stuck_ticks += 1
            if fsm.stuck_ticks > self.cfg.fsm.stuck_ticks:
                fsm.stuck_ticks = 0
                fsm.waypoints = None
                if self.allow_recovery:
                    fsm.set_mode(self.tick, RECOVERING, "stuck")
                else:
                    fsm.halted = True
                    self.halted_wedge = True
            return
        fsm.stuck_ticks = 0
        self.robot = Pose(nx, ny, self.robot.z, new_yaw)
        self.path_length += step
        fsm.history.append((nx, ny))
        if self.world.column_collides(nx, ny):
            self.collisions += 1
        if recovery_active and math.hypot(tx - nx, ty - ny) < 0.06:
            wps.pop(0)
            if not wps:
                fsm.recovery = None

    def observe_sectors(self):
        if self.last_snap is None:
            return
        done = self.sem_manager.observe(self.robot, self.mapper.models,
                                        self.last_snap)
        for key in done:
            self.trajectory.append(f"E {self.tick} sector_done {key[0]} {key[1]}")

    # -- main loop ----------------------------------------------------------

    def run(self, out_dir=None) -> RunMetrics:
        h = self.cfg.harness
        budget = h.tick_budget
        while self.tick < budget:
            self.sense()
            if h.inject_pseudo_collisions and self.tick > 0 \
                    and self.tick % h.inject_every_ticks == 0:
                self.inject_pseudo_collision()
            if self.tick % h.detect_every_ticks == 0:
                self.detect()
            if self.tick % self.cfg.semantic.update_every_ticks == 0:
                self.mapper.update()
            if self.tick % h.plan_every_ticks == 0:
                self.plan_round()
            self.move()
            if self.tick % 2 == 0:
                self.observe_sectors()
            self.trajectory.append(
                f"T {self.tick} {self.robot.x!r} {self.robot.y!r} "
                f"{self.robot.z!r} {self.robot.yaw!r} {self.fsm.mode}"
            )
            self.tick += 1
            if self.complete:
                break
            if self.halted_wedge:
                break

        metrics = self.compute_metrics()
        if out_dir is not None:
            self.export(out_dir, metrics)
        return metrics

    # -- metrics ------------------------------------------------------------

    def _match_models_to_truth(self):
        pairs = {}
        for model in self.mapper.models:
            best, best_d = None, 1.0
            for obj in self.world.objects:
                if obj.label != model.label:
                    continue
                d = float(np.linalg.norm(obj.box.center[:2] - model.center[:2]))
                if d < best_d:
                    best, best_d = obj.index, d
            if best is not None:
                pairs[model.id] = best
        return pairs

    def compute_metrics(self) -> RunMetrics:
        m = RunMetrics(self.spec.name, self.method, self.seed)
        m.ticks = self.tick
        m.runtime_s = self.tick * self.cfg.harness.dt
        m.path_length_m = self.path_length
        m.recover_count = self.fsm.recover_count
        m.collisions = self.collisions
        m.complete = self.complete
        m.blocked_regions = sum(1 for r in self.regions.regions if r.dropped)
        m.map_completeness_pct = self.grid.completeness(self.world.reachable_mask)

        observable = sector_observability(self.world, self.cfg)
        expected = sum(1 for v in observable.values() if v)
        match = self._match_models_to_truth()
        completed = set()
        for (mid, sector), state in self.sem_manager.states.items():
            if state.status == "completed" and mid in match:
                if observable.get((match[mid], sector), False):
                    completed.add((match[mid], sector))
        m.vp_sectors_expected = expected
        m.vp_sectors_completed = len(completed)
        m.vp_completeness_pct = (
            100.0 * len(completed) / expected if expected else 100.0
        )

        from scipy.spatial import cKDTree

        for model in self.mapper.models:
            if model.id not in match:
                continue
            obj = self.world.objects[match[model.id]]
            dense = extract_dense(model, self.cfg.semantic.dense_min_pts_voxel)
            ref = observable_surface(self.world, obj)
            entry = {
                "id": model.id, "label": model.label,
                "truth_index": obj.index, "points": int(len(dense.points)),
                "completeness_pct": 0.0, "mean_error_m": float("nan"),
            }
            if len(dense.points) and len(ref):
                tree = cKDTree(dense.points)
                d_ref, _ = tree.query(ref)
                entry["completeness_pct"] = float(100.0 * (d_ref <= 0.025).mean())
                truth_tree = cKDTree(obj.surface_points)
                d_dense, _ = truth_tree.query(dense.points)
                entry["mean_error_m"] = float(d_dense.mean())
            m.object_metrics.append(entry)
        return m

    # -- exports --------------------------------------------------------------

    def export(self, out_dir, metrics: RunMetrics) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
        with open(os.path.join(out_dir, "trajectory.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.trajectory) + "\n")
        with open(os.path.join(out_dir, "regions.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.region_log) + "\n")
        with open(os.path.join(out_dir, "map.txt"), "w", encoding="utf-8") as fh:
            self.grid.export_known(fh)
        obj_dir = os.path.join(out_dir, "objects")
        os.makedirs(obj_dir, exist_ok=True)
        manifest = []
        for model in sorted(self.mapper.models, key=lambda x: x.id):
            dense = extract_dense(model, self.cfg.semantic.dense_min_pts_voxel)
            path = os.path.join(obj_dir, f"obj_{model.id}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                for p in dense.points:
                    fh.write(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f}\n")
            box = model.bbox()
            manifest.append({
                "id": model.id, "label": model.label,
                "points": int(len(dense.points)),
                "bbox_lo": list(box.lo) if box else None,
                "bbox_hi": list(box.hi) if box else None,
            })
        with open(os.path.join(obj_dir, "background.txt"), "w", encoding="utf-8") as fh:
            for key in sorted(self.background):
                for p in self.background[key]:
                    fh.write(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f}\n")
        with open(os.path.join(obj_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        np.savez_compressed(
            os.path.join(out_dir, "state.npz"),
            log_odds=self.grid.log_odds, touched=self.grid.touched,
            origin=self.grid.origin, dims=self.grid.dims,
        )
        from .scenario import save_scenario

        save_scenario(self.spec, os.path.join(out_dir, "scenario.yaml"))


def run_scenario(spec: ScenarioSpec, cfg: SystemConfig | None = None,
                 seed: int | None = None, method: str = "pdls",
                 out_dir=None) -> RunMetrics:
    sim = Simulation(spec, cfg, seed=seed, method=method)
    return sim.run(out_dir=out_dir)
