import math

import numpy as np
import pytest

from semexp.config import PrmConfig, SemanticConfig, ViewpointConfig
from semexp.geometry import Box, Pose
from semexp.grid import OCCUPIED
from semexp.prm import PrmGraph
from semexp.scenario import ScenarioSpec, World
from semexp.semantic import ObjectMapper
from semexp.sensor import SensorConfig, simulate_detection
from semexp.viewpoints import (
    COMPLETED, PENDING, UNOBSERVABLE, SemanticVpManager, Viewpoint,
    grid_register, information_gain, observation_score,
    sample_sector_viewpoint, covered_frontiers,
)

from helpers import observe_world, planar_snapshot, set_free, set_occupied, synthetic_grid
from oracles import visible_unknown_bruteforce

SENSOR = SensorConfig(range_noise=0.0)
VP_CFG = ViewpointConfig()


def observed_world_with_model(objects, obstacles=(), side=14.0, z=1.6,
                              sensor=SENSOR, view_poses=None, sem_cfg=None):
    spec = ScenarioSpec(
        name="t", bounds=Box((0, 0, 0), (side, side, z)),
        start=Pose(1.0, 1.0, 0.8),
        obstacles=list(obstacles), objects=list(objects),
    )
    world = World(spec)
    if view_poses is None:
        center = np.asarray(objects[0][1].center)
        view_poses = [
            Pose(center[0] + 2.0 * math.cos(a), center[1] + 2.0 * math.sin(a),
                 0.8, yaw=a + math.pi)
            for a in np.linspace(0, 2 * math.pi, 8, endpoint=False)
        ]
    grid = observe_world(world, view_poses, sensor)
    mapper = ObjectMapper(sem_cfg or SemanticConfig(), sensor)
    for t, pose in enumerate(view_poses):
        for zm in simulate_detection(world, pose, sensor, rng_seed=t):
            mapper.ingest(zm, tick=t)
        mapper.update()
    return world, grid, mapper


def test_observation_score_zero_behind_wall():
    crate = ("crate", Box((10.0, 6.5, 0.0), (11.0, 7.5, 1.0)))
    wall = Box((8.0, 5.0, 0.0), (8.3, 9.0, 1.6))
    world, grid, mapper = observed_world_with_model([crate], obstacles=[wall])
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    res = observation_score(Pose(6.0, 7.0, 0.8, yaw=0.0), model, snap, SENSOR)
    assert res.score == 0 or res.visible_frac < 0.05


def test_observation_score_monotone_in_distance():
    crate = ("crate", Box((6.5, 6.5, 0.0), (7.5, 7.5, 0.8)))
    world, grid, mapper = observed_world_with_model([crate])
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    near = observation_score(Pose(5.0, 7.0, 0.8, yaw=0.0), model, snap, SENSOR)
    far = observation_score(Pose(3.0, 7.0, 0.8, yaw=0.0), model, snap, SENSOR)
    assert near.score > far.score > 0


def test_observation_score_matches_projection_oracle():
    crate = ("crate", Box((6.6, 6.6, 0.2), (7.4, 7.4, 1.0)))
    world, grid, mapper = observed_world_with_model([crate])
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    pose = Pose(5.0, 7.0, 0.8, yaw=0.0)
    res = observation_score(pose, model, snap, SENSOR, max_vox=10**9)
    assert res.score > 0

    # inverse oracle: a pixel belongs to the mask iff the ray through its
    # center intersects any confident voxel's cube (open room: no occluders)
    idx = model.confident_voxels()
    centers = model.voxel_center(idx)
    half = model.res / 2.0
    boxes_lo = centers - half
    boxes_hi = centers + half
    eye = pose.xyz

    # candidate pixel window from the projected corner spread, padded
    corners = (centers[:, None, :] + np.array(
        [[sx, sy, sz] for sx in (-half, half) for sy in (-half, half)
         for sz in (-half, half)])[None, :, :]).reshape(-1, 3)
    from semexp.sensor import project_batch, ray_box_entry
    cx, cy = project_batch(pose.to_sensor(corners), SENSOR)
    px0, px1 = int(cx.min()) - 2, int(cx.max()) + 2
    py0 = max(int(cy.min()) - 2, 0)              # pixels exist only inside
    py1 = min(int(cy.max()) + 2, SENSOR.h_img - 1)  # the physical image

    pxs, pys = np.meshgrid(np.arange(px0, px1 + 1), np.arange(py0, py1 + 1),
                           indexing="ij")
    pxs = pxs.ravel()
    pys = pys.ravel()
    theta = math.pi - 2.0 * math.pi * (pxs + 0.5) / SENSOR.w_img + pose.yaw
    tan_el = -((pys + 0.5) - SENSOR.y_0) / SENSOR.f_y
    dirs = np.stack([np.cos(theta), np.sin(theta), tan_el], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.repeat(eye[None, :], len(dirs), axis=0)
    entry = ray_box_entry(origins, dirs, boxes_lo, boxes_hi)
    oracle = int(np.isfinite(entry).any(axis=1).sum())
    assert res.score == pytest.approx(oracle, rel=0.02)


def test_semantic_vps_full_ring_in_open_space():
    crate = ("crate", Box((6.6, 6.6, 0.0), (7.4, 7.4, 0.9)))
    world, grid, mapper = observed_world_with_model([crate])
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    mgr = SemanticVpManager(SENSOR, VP_CFG, plan_z=0.8)
    mgr.refresh(mapper.models, snap)
    vps = mgr.pending_viewpoints()
    assert len(vps) == model.cfg.sectors  # one per sector, none blocked
    dists = [math.hypot(vp.pose.x - model.center[0], vp.pose.y - model.center[1])
             for vp in vps]
    # symmetric situation: all sectors settle at nearly the same stand-off
    assert max(dists) - min(dists) < 0.3
    for vp in vps:
        # yaw faces the object center
        want = math.atan2(model.center[1] - vp.pose.y, model.center[0] - vp.pose.x)
        assert abs((vp.pose.yaw - want + math.pi) % (2 * math.pi) - math.pi) < 0.26


def test_blocked_sector_yields_no_viewpoint():
    crate = ("crate", Box((6.6, 6.6, 0.0), (7.4, 7.4, 0.9)))
    # wall hugging the +x side of the object blocks sector 0 candidates
    wall = Box((7.6, 5.8, 0.0), (8.0, 9.2, 1.6))
    world, grid, mapper = observed_world_with_model([crate], obstacles=[wall])
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    vp = sample_sector_viewpoint(model, 0, snap, SENSOR, VP_CFG, plan_z=0.8)
    assert vp is None
    # an open sector still works
    assert sample_sector_viewpoint(model, 4, snap, SENSOR, VP_CFG, 0.8) is not None


def test_vfov_rejects_near_candidates_analytically():
    # tall object: near candidates cannot fit it vertically in a 45 deg FOV
    tall = ("rack", Box((6.7, 6.7, 0.0), (7.3, 7.3, 1.5)))
    world, grid, mapper = observed_world_with_model(
        [tall], side=14.0, z=2.0,
        view_poses=[Pose(7.0 + 2.4 * math.cos(a), 7.0 + 2.4 * math.sin(a), 0.8,
                         yaw=a + math.pi)
                    for a in np.linspace(0, 2 * math.pi, 12, endpoint=False)],
    )
    model = mapper.models[0]
    snap = world.truth_grid().snapshot()
    vp = sample_sector_viewpoint(model, 0, snap, SENSOR, VP_CFG, plan_z=0.8)
    assert vp is not None
    d = math.hypot(vp.pose.x - model.center[0], vp.pose.y - model.center[1])
    # analytic minimum stand-off for full vertical coverage:
    # top requires (z_top - z_s)/tan, bottom requires (z_s - z_bot)/tan,
    # measured from the NEAR FACE of the object, not its center
    tan_half = math.tan(SENSOR.v_fov / 2.0)
    z_top, z_bot, z_s = 1.5, 0.0, 0.8
    d_min_face = max(z_top - z_s, z_s - z_bot) / tan_half
    half_extent = 0.3
    assert d >= d_min_face + half_extent - 0.26  # within one candidate step
    assert d >= VP_CFG.r_min + 0.25  # the closest candidates were rejected


def test_update_rule_b_replaces_occupied_viewpoint():
    crate = ("crate", Box((6.6, 6.6, 0.0), (7.4, 7.4, 0.9)))
    world, grid, mapper = observed_world_with_model([crate])
    tgrid = world.truth_grid()
    mgr = SemanticVpManager(SENSOR, VP_CFG, plan_z=0.8)
    mgr.refresh(mapper.models, tgrid.snapshot())
    key = (mapper.models[0].id, 0)
    vp0 = mgr.states[key].viewpoint
    assert vp0 is not None
    # the viewpoint's voxel becomes occupied
    v = tgrid.world_to_voxel(vp0.pose.xyz)
    set_occupied(tgrid, tuple(v))
    mgr.refresh(mapper.models, tgrid.snapshot())
    state = mgr.states[key]
    assert state.status in (PENDING, UNOBSERVABLE)
    if state.status == PENDING:
        assert state.viewpoint.pose != vp0.pose


def test_observe_completes_sector():
    crate = ("crate", Box((6.6, 6.6, 0.0), (7.4, 7.4, 0.9)))
    world, grid, mapper = observed_world_with_model([crate])
    snap = world.truth_grid().snapshot()
    mgr = SemanticVpManager(SENSOR, VP_CFG, plan_z=0.8)
    mgr.refresh(mapper.models, snap)
    key = (mapper.models[0].id, 0)
    vp = mgr.states[key].viewpoint
    completed = mgr.observe(vp.pose, mapper.models, snap)
    assert key in completed
    assert mgr.states[key].status == COMPLETED
    # completed sectors never reappear as pending
    mgr.refresh(mapper.models, snap)
    assert mgr.states[key].status == COMPLETED


def test_grid_register_merges_cell_mates():
    vp1 = Viewpoint(Pose(1.2, 1.3, 0.8, 0.0), "semantic", 50.0, 0, 0,
                    obligations=frozenset({(0, 0)}))
    vp2 = Viewpoint(Pose(1.8, 1.6, 0.8, 1.0), "semantic", 80.0, 1, 3,
                    obligations=frozenset({(1, 3)}))
    vp3 = Viewpoint(Pose(4.5, 1.4, 0.8, 2.0), "semantic", 30.0, 2, 5,
                    obligations=frozenset({(2, 5)}))
    out = grid_register([vp1, vp2, vp3], g=2.0)
    assert len(out) == 2
    merged = next(v for v in out if v.obligations == {(0, 0), (1, 3)})
    assert merged.pose.x == pytest.approx(1.0)  # cell center of cell (0,0)
    assert merged.pose.y == pytest.approx(1.0)
    assert merged.score == 80.0
    lone = next(v for v in out if v.obligations == {(2, 5)})
    assert lone.pose.x == pytest.approx(5.0)


def test_grid_register_floor_division_oracle():
    rng = np.random.default_rng(5)
    vps = []
    for k in range(5):
        x, y = rng.uniform(0, 4, 2)
        vps.append(Viewpoint(Pose(float(x), float(y), 0.8), "semantic", float(k),
                             k, 0, obligations=frozenset({(k, 0)})))
    g = 2.0
    out = grid_register(vps, g=g)
    want_cells = {(math.floor(v.pose.x / g), math.floor(v.pose.y / g)) for v in vps}
    assert len(out) == len(want_cells)
    union = frozenset().union(*[v.obligations for v in out])
    assert union == frozenset({(k, 0) for k in range(5)})


def test_information_gain_zero_when_fully_known():
    g = synthetic_grid((40, 40, 8), fill="free")
    snap = g.snapshot()
    assert information_gain(Pose(2.0, 2.0, 0.4), snap, SENSOR) == 0


def test_information_gain_matches_bruteforce_oracle():
    g = synthetic_grid((24, 24, 4))
    set_free(g, np.s_[:12, :, :])  # half the room known-free, half unknown
    set_occupied(g, np.s_[12:14, 8:16, :])  # a wall with a shadow behind it
    snap = g.snapshot()
    pose = Pose(0.6, 1.2, 0.25)
    cfg = SensorConfig(max_range=2.0, range_noise=0.0)
    got = information_gain(pose, snap, cfg)
    want = visible_unknown_bruteforce(snap, pose.xyz, cfg.max_range, cfg.v_fov / 2)
    assert got == want


def test_information_gain_excludes_occluded_pocket():
    g = synthetic_grid((30, 30, 4), fill="free")
    set_occupied(g, np.s_[14:16, 0:30, :])   # full wall
    from helpers import set_unknown
    set_unknown(g, np.s_[20:24, 10:14, :])   # unknown pocket behind the wall
    snap = g.snapshot()
    pose = Pose(0.5, 1.2, 0.2, 0.0)
    assert information_gain(pose, snap, SensorConfig(max_range=5.0)) == 0


def test_covered_frontiers_respects_occlusion_and_range():
    g = synthetic_grid((40, 40, 4), fill="free")
    set_occupied(g, np.s_[10:12, 0:20, :])
    snap = g.snapshot()
    frontiers = {(5, 5, 1), (15, 5, 1), (30, 30, 1)}
    pose = Pose(0.35, 0.35, 0.15)
    cfg = SensorConfig(max_range=2.0, range_noise=0.0)
    got = covered_frontiers(pose, frontiers, snap, cfg)
    assert (5, 5, 1) in got            # close and visible
    assert (15, 5, 1) not in got       # behind the wall
    assert (30, 30, 1) not in got      # beyond range


# -- PRM ----------------------------------------------------------------------


def test_prm_grows_to_density_target():
    g = synthetic_grid((60, 60, 4), fill="free")
    snap = planar_snapshot(g, plan_z=0.2)
    prm = PrmGraph(PrmConfig(samples_per_update=200), z=0.2)
    rng = np.random.default_rng(0)
    for _ in range(4):
        prm.maintain(snap, (0.0, 0.0, 6.0, 6.0), rng, aggressive=False)
    cfg = prm.cfg
    cells_x = math.ceil(6.0 / cfg.sample_cell)
    want_min = 0.8 * cells_x * cells_x * cfg.target_per_cell
    assert len(prm) >= want_min


def test_prm_removes_edges_crossing_new_wall():
    g = synthetic_grid((60, 60, 4), fill="free")
    prm = PrmGraph(PrmConfig(), z=0.2)
    a = prm.add_node(1.0, 1.0, 1)
    b = prm.add_node(2.4, 1.0, 1)
    prm.connect(a, planar_snapshot(g, plan_z=0.2), aggressive=False)
    assert b in prm.adj[a]
    set_occupied(g, np.s_[17:19, 5:20, :])  # wall between them
    snap2 = planar_snapshot(g, plan_z=0.2)
    prm.maintain(snap2, (0.0, 0.0, 6.0, 6.0), np.random.default_rng(1),
                 aggressive=False)
    assert b not in prm.adj.get(a, {})
    assert prm.validate_edges(snap2) == 0


def test_prm_no_edge_crosses_occupied_after_maintenance():
    g = synthetic_grid((60, 60, 4), fill="free")
    set_occupied(g, np.s_[20:24, 0:40, :])
    set_occupied(g, np.s_[40:44, 20:60, :])
    snap = planar_snapshot(g, plan_z=0.2)
    prm = PrmGraph(PrmConfig(samples_per_update=150), z=0.2)
    rng = np.random.default_rng(7)
    for _ in range(5):
        prm.maintain(snap, (0.0, 0.0, 6.0, 6.0), rng, aggressive=True)
    assert len(prm) > 10
    assert prm.validate_edges(snap) == 0


def test_adaptive_sampling_beats_uniform_rejection_on_cov():
    """Per-cell node-count spread: adaptive sampling vs uniform, 20 seeds."""
    g = synthetic_grid((60, 60, 4), fill="free")
    set_occupied(g, np.s_[0:30, 0:30, :])  # nonuniform free space
    snap = planar_snapshot(g, plan_z=0.2)
    lph = (0.0, 0.0, 6.0, 6.0)
    cfg = PrmConfig(samples_per_update=120)

    def cov_of(counts):
        arr = np.asarray(counts, dtype=float)
        return arr.std() / arr.mean() if arr.mean() > 0 else 0.0

    def cell_counts(positions):
        counts = {}
        for x, y in positions:
            if 3.0 <= x or 3.0 <= y:  # only the free half matters
                key = (int(x / cfg.sample_cell), int(y / cfg.sample_cell))
                counts[key] = counts.get(key, 0) + 1
        free_cells = []
        for i in range(4):
            for j in range(4):
                cx, cy = (i + 0.5) * cfg.sample_cell, (j + 0.5) * cfg.sample_cell
                if cx >= 3.0 or cy >= 3.0:
                    free_cells.append(counts.get((i, j), 0))
        return free_cells

    adaptive_cov, uniform_cov = [], []
    for seed in range(20):
        prm = PrmGraph(cfg, z=0.2)
        rng = np.random.default_rng(seed)
        prm.maintain(snap, lph, rng, aggressive=False)
        budget_used = cfg.samples_per_update
        adaptive_cov.append(cov_of(cell_counts(prm.pos.values())))

        rng2 = np.random.default_rng(seed)
        placed = []
        for _ in range(budget_used):
            x = rng2.uniform(0.0, 6.0)
            y = rng2.uniform(0.0, 6.0)
            v = snap.world_to_voxel((x, y, 0.2))
            if snap.in_bounds(v) and snap.classes[tuple(v)] == 1:
                placed.append((x, y))
        uniform_cov.append(cov_of(placed and cell_counts(placed) or [0]))

    assert np.mean(adaptive_cov) < np.mean(uniform_cov)


def test_astar_and_shortcut():
    g = synthetic_grid((60, 60, 4), fill="free")
    set_occupied(g, np.s_[28:30, 0:45, :])
    snap = planar_snapshot(g, plan_z=0.2)
    prm = PrmGraph(PrmConfig(samples_per_update=250), z=0.2)
    rng = np.random.default_rng(3)
    for _ in range(6):
        prm.maintain(snap, (0.0, 0.0, 6.0, 6.0), rng, aggressive=False)
    path = prm.astar(snap, (1.0, 1.0), (5.0, 1.0), aggressive=False)
    assert path is not None
    # the path must detour above the wall gap at y ~= 4.5
    ys = [p[1] for p in path]
    assert max(ys) > 4.0
    short = prm.shortcut(snap, path, aggressive=False, safe_dist=0.1)
    assert len(short) <= len(path)

    def plen(pts):
        return sum(math.dist(a, b) for a, b in zip(pts[:-1], pts[1:]))

    assert plen(short) <= plen(path) + 1e-9
