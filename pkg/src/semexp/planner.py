"""Receding-horizon global planning over locally sampled viewpoints.

Each planning round runs the local sampler in the active regions that
intersect the robot's planning horizon, adds one aggregate node per remaining
active region, routes through everything as an open asymmetric TSP, and
returns only the first step of the tour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atsp import CostMatrix, solve_atsp
from .config import SystemConfig
from .geometry import Pose
from .sampler import Candidate, LocalSampleProblem, lgs_select, nbv_reward, pdls, travel_time
from .viewpoints import Viewpoint, covered_frontiers


@dataclass
class PlanDecision:
    status: str                     # "goto" | "complete" | "failed"
    target: Viewpoint | None = None
    waypoints: list | None = None   # [(x, y), ...] including both endpoints
    tour: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    events: list = field(default_factory=list)


def lph_box(pose: Pose, half: float):
    return (pose.x - half, pose.y - half, pose.x + half, pose.y + half)


def _boxes_overlap(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def region_representative(region, snap) -> Pose | None:
    """Aggregate node for a non-local region: its viewpoint-grid centroid,
    falling back to the frontier centroid."""
    pts = [(vp.pose.x, vp.pose.y) for vp in region.semantic_vps]
    if not pts and region.frontiers:
        centers = snap.voxel_center(np.asarray(sorted(region.frontiers)))
        pts = [(float(c[0]), float(c[1])) for c in centers]
    if not pts:
        return None
    xs = sum(p[0] for p in pts) / len(pts)
    ys = sum(p[1] for p in pts) / len(pts)
    return Pose(xs, ys, 0.0)


def build_cost_matrix(current: Pose, vps: list, prm, snap, cfg: SystemConfig,
                      v: float, omega: float, aggressive: bool):
    """Approach costs via roadmap search, inter-viewpoint costs by distance."""
    if not vps:
        raise ValueError("need at least one viewpoint")
    sentinel = cfg.planner.unreachable_cost
    k = len(vps)
    values = np.zeros((k + 1, k + 1))
    paths = {}
    for i, vp in enumerate(vps):
        wp = prm.astar(snap, (current.x, current.y), (vp.pose.x, vp.pose.y),
                       aggressive)
        if wp is None:
            values[0, i + 1] = sentinel
        else:
            wp = prm.shortcut(snap, wp, aggressive, cfg.fsm.safe_dist)
            paths[i] = wp
            values[0, i + 1] = travel_time(
                wp, omega, v, cfg.sampler.turn_cost_mode, start_yaw=current.yaw
            )
    c = cfg.planner.time_cost_coeff
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            d = math.hypot(vps[i].pose.x - vps[j].pose.x,
                           vps[i].pose.y - vps[j].pose.y)
            values[i + 1, j + 1] = c * d / v
    matrix = CostMatrix(values, labels=list(range(k)), sentinel=sentinel)
    return matrix, paths


def _candidate_gains_on_path(wp, gain_by_pos):
    gains = []
    for p in wp:
        gains.append(gain_by_pos.get((round(p[0], 6), round(p[1], 6)), 0.0))
    return gains


def sample_local_region(region, geometric_vps, snap, prm, robot: Pose,
                        cfg: SystemConfig, sensor, v: float, omega: float,
                        aggressive: bool):
    """Run the priority-driven decoupled sampler for one region."""
    frac = cfg.sampler.coverage_range_frac
    sem_pairs = []
    for vp in sorted(region.semantic_vps, key=lambda x: x.key()):
        cov = covered_frontiers(vp.pose, region.frontiers, snap, sensor, frac)
        sem_pairs.append((vp, frozenset(cov)))

    gain_by_pos = {
        (round(vp.pose.x, 6), round(vp.pose.y, 6)): vp.score
        for vp in geometric_vps
    }
    candidates = []
    for vp in geometric_vps:
        x0, y0, x1, y1 = region.bounds_xy
        if not (x0 <= vp.pose.x < x1 and y0 <= vp.pose.y < y1):
            continue
        wp = prm.astar(snap, (robot.x, robot.y), (vp.pose.x, vp.pose.y), aggressive)
        if wp is None:
            continue
        gains = _candidate_gains_on_path(wp, gain_by_pos)
        gains[-1] = vp.score  # terminal node always carries its own gain
        reward = nbv_reward(wp, gains, omega, v, cfg.sampler.turn_cost_mode)
        cov = covered_frontiers(vp.pose, region.frontiers, snap, sensor, frac)
        length = sum(math.dist(a, b) for a, b in zip(wp[:-1], wp[1:]))
        candidates.append(Candidate(
            ident=vp, reward=reward, coverage=frozenset(cov),
            path_length=length, tie_break=vp.key(),
        ))

    problem = LocalSampleProblem(
        frontiers=set(region.frontiers), semantic=sem_pairs, candidates=candidates
    )
    return pdls(problem, cfg.sampler)


def global_step(robot: Pose, regions, geometric_vps, snap, prm,
                cfg: SystemConfig, sensor, v: float, omega: float,
                aggressive: bool) -> PlanDecision:
    """One receding-horizon planning round; only the first tour step returns."""
    active = [r for r in regions.active_regions()]
    if not active:
        return PlanDecision(status="complete")

    horizon = lph_box(robot, cfg.prm.lph_half_extent)
    local = [r for r in active if _boxes_overlap(horizon, r.bounds_xy)]
    remote = [r for r in active if r not in local]

    selected: list[Viewpoint] = []
    events = []
    for region in sorted(local, key=lambda r: r.region_id):
        outcome = sample_local_region(
            region, geometric_vps, snap, prm, robot, cfg, sensor, v, omega,
            aggressive,
        )
        if outcome.blocked:
            region.blocked_streak += 1
            events.append(("region_blocked", region.region_id,
                           region.blocked_streak))
        else:
            region.blocked_streak = 0
        for vp in outcome.selected:
            selected.append(vp)

    remote_nodes = []
    for region in sorted(remote, key=lambda r: r.region_id):
        rep = region_representative(region, snap)
        if rep is not None:
            remote_nodes.append(Viewpoint(
                pose=Pose(rep.x, rep.y, robot.z), kind="geometric", score=0.0,
                node_id=-1 - region.region_id,
            ))

    all_vps = selected + remote_nodes
    if not all_vps:
        blocked = [r for r in active if r.blocked_streak > 0]
        if blocked and len(blocked) == len(active):
            return PlanDecision(status="failed",
                                events=[("all_regions_blocked", len(blocked))])
        return PlanDecision(status="failed", events=[("no_viewpoints",)])

    matrix, paths = build_cost_matrix(robot, all_vps, prm, snap, cfg, v, omega,
                                      aggressive)
    order, cost, dropped = solve_atsp(matrix, cfg.planner.exact_cutoff)
    if not order:
        return PlanDecision(status="failed",
                            events=[("all_unreachable", len(all_vps))])
    first = order[0] - 1
    target = all_vps[first]
    waypoints = paths.get(first)
    if waypoints is None:
        return PlanDecision(status="failed", events=[("no_path_to_first",)])
    return PlanDecision(status="goto", target=target, waypoints=waypoints,
                        tour=[all_vps[i - 1] for i in order], selected=selected,
                        events=events)


def lgs_step(robot: Pose, regions, geometric_vps, snap, prm, models,
             sem_manager, cfg: SystemConfig, v: float, omega: float,
             aggressive: bool) -> PlanDecision:
    """Greedy single-viewpoint baseline used by the ablation suite."""
    active = regions.active_regions()
    if not active:
        return PlanDecision(status="complete")

    horizon = lph_box(robot, cfg.prm.lph_half_extent)
    pending = [
        key for key, state in sorted(sem_manager.states.items())
        if state.status == "pending"
    ]
    by_id = {m.id: m for m in models}

    def semantic_gain(pose: Pose) -> float:
        gain = 0.0
        for obj_id, sector in pending:
            model = by_id.get(obj_id)
            if model is None:
                continue
            if pose.dist_xy(Pose(model.center[0], model.center[1], pose.z)) \
                    > model.cfg.radius:
                continue
            if model.sector_of(pose) == sector:
                gain += float(model.confident_mask().sum())
        return gain

    scored = []
    in_lph = [
        vp for vp in geometric_vps
        if horizon[0] <= vp.pose.x <= horizon[2]
        and horizon[1] <= vp.pose.y <= horizon[3]
    ]
    sem_vps = [vp for r in active for vp in r.semantic_vps]
    for vp in sorted(in_lph + sem_vps, key=lambda x: x.key()):
        geo = vp.score if vp.kind == "geometric" else 0.0
        scored.append((vp, geo, semantic_gain(vp.pose),
                       cfg.sampler.lgs_semantic_weight))
    choice = lgs_select(scored)

    if choice is None:
        # nothing gains locally: head for the nearest active region
        reps = []
        for region in sorted(active, key=lambda r: r.region_id):
            rep = region_representative(region, snap)
            if rep is not None:
                reps.append((robot.dist_xy(rep), region.region_id, rep))
        for _, _, rep in sorted(reps, key=lambda t: (t[0], t[1])):
            wp = prm.astar(snap, (robot.x, robot.y), (rep.x, rep.y), aggressive)
            if wp is not None:
                wp = prm.shortcut(snap, wp, aggressive, cfg.fsm.safe_dist)
                target = Viewpoint(pose=Pose(rep.x, rep.y, robot.z),
                                   kind="geometric", score=0.0)
                return PlanDecision(status="goto", target=target, waypoints=wp)
        return PlanDecision(status="failed", events=[("lgs_no_route",)])

    wp = prm.astar(snap, (robot.x, robot.y), (choice.pose.x, choice.pose.y),
                   aggressive)
    if wp is None:
        return PlanDecision(status="failed", events=[("lgs_unreachable",)])
    wp = prm.shortcut(snap, wp, aggressive, cfg.fsm.safe_dist)
    return PlanDecision(status="goto", target=choice, waypoints=wp,
                        selected=[choice])
