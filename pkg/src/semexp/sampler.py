"""Priority-driven decoupled local sampling of viewpoints.

Semantic viewpoints are accepted unconditionally; geometric candidates are
then drawn from a reward queue (accumulated information gain over estimated
travel time) and kept only while they add enough new frontier coverage.
A greedy single-winner baseline used in ablations lives here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import SamplerConfig


def travel_time(nodes, omega: float, v: float, mode: str = "verbatim",
                start_yaw: float | None = None) -> float:
    """Estimated traversal time of a waypoint polyline.

    The verbatim mode charges each segment `arctan(dy/dx)/omega + len/v`,
    taking the signed limit of the arctan at vertical segments. The
    delta-heading mode charges `|heading change|/omega + len/v` instead.
    """
    if omega <= 0 or v <= 0:
        raise ValueError("omega and v must be positive")
    total = 0.0
    prev_heading = start_yaw
    for (x0, y0), (x1, y1) in zip(nodes[:-1], nodes[1:]):
        dx, dy = x1 - x0, y1 - y0
        length = math.hypot(dx, dy)
        if length == 0.0:
            continue
        if mode == "verbatim":
            if dx == 0.0:
                turn = math.copysign(math.pi / 2.0, dy)
            else:
                turn = math.atan(dy / dx)
            total += turn / omega + length / v
        elif mode == "delta_heading":
            heading = math.atan2(dy, dx)
            if prev_heading is None:
                turn = 0.0
            else:
                turn = abs((heading - prev_heading + math.pi) % (2 * math.pi) - math.pi)
            prev_heading = heading
            total += turn / omega + length / v
        else:
            raise ValueError(f"unknown turn_cost_mode {mode!r}")
    return total


def nbv_reward(nodes, node_gains, omega: float, v: float,
               mode: str = "verbatim") -> float:
    """Accumulated information gain per estimated travel time along a path."""
    if len(nodes) < 2:
        raise ValueError("path needs at least two nodes")
    t = travel_time(nodes, omega, v, mode)
    gain = float(sum(node_gains))
    if t <= 0.0:
        return math.inf if gain > 0 else 0.0
    return gain / t


@dataclass(frozen=True)
class Candidate:
    """One geometric viewpoint candidate offered to the sampler."""

    ident: object
    reward: float
    coverage: frozenset
    path_length: float = 0.0
    tie_break: tuple = ()


@dataclass
class LocalSampleProblem:
    frontiers: set
    semantic: list          # (ident, coverage frozenset) accepted unconditionally
    candidates: list        # Candidate, any order


@dataclass
class SampleOutcome:
    selected: list = field(default_factory=list)   # idents in acceptance order
    covered: set = field(default_factory=set)
    uncovered: set = field(default_factory=set)
    blocked: bool = False


def pdls(problem: LocalSampleProblem, cfg: SamplerConfig) -> SampleOutcome:
    """Semantic-first viewpoint selection with reward-ordered pseudo-sampling.

    Every semantic viewpoint is selected and its frontier coverage applied;
    the geometric queue is then consumed in descending reward order, keeping
    candidates whose incremental coverage reaches `min_cov` cells, until the
    queue empties or rewards fall below the negligible-fraction cutoff.
    """
    out = SampleOutcome()
    queue = set(problem.frontiers)

    for ident, coverage in problem.semantic:
        out.selected.append(ident)
        newly = queue & set(coverage)
        out.covered |= newly
        queue -= newly

    order = sorted(
        problem.candidates,
        key=lambda c: (-c.reward, c.path_length, c.tie_break),
    )
    if order:
        top = order[0].reward
        eps = cfg.reward_eps_frac * max(top, 0.0)
        for cand in order:
            if not queue:
                break
            if cand.reward < eps:
                break
            newly = queue & set(cand.coverage)
            if len(newly) >= cfg.min_cov:
                out.selected.append(cand.ident)
                out.covered |= newly
                queue -= newly

    out.uncovered = queue
    if problem.frontiers and not out.selected:
        out.blocked = True
    return out


def lgs_select(candidates) -> object | None:
    """Greedy baseline: single candidate with the largest combined gain.

    `candidates` holds (ident, geometric_gain, semantic_gain, weight) tuples;
    the winning ident is returned, or None when nothing scores above zero.
    """
    scored = sorted(
        ((geo + w_sem * sem, repr(ident), ident)
         for ident, geo, sem, w_sem in candidates),
        key=lambda t: (-t[0], t[1]),
    )
    for gain, _, ident in scored:
        if gain > 0:
            return ident
    return None
