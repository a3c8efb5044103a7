"""Safe aggressive exploration state machine.

Three states drive the replan/execute/recover loop: planning extends paths
into unknown space (optimistically assuming non-occupied connectivity), the
executing state keeps re-verifying the committed path backward against the
actual known-free map, and pseudo-collisions trigger a backtrack along the
recently executed trajectory while replanning re-arms in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Pose
from .grid import GridSnapshot
from .prm import ball_known_free

EXPLORING, EXECUTING, RECOVERING = "exploring", "executing", "recovering"


def backward_path_check(waypoints, snap: GridSnapshot, safe_dist: float,
                        probe_log=None) -> bool:
    """Verify the committed path from its far end backward.

    Safe only when every node's surrounding ball is actual known-free space;
    returns at the first violation, so later (nearer) nodes go uninspected.
    """
    for i in range(len(waypoints) - 1, -1, -1):
        if probe_log is not None:
            probe_log.append(i)
        x, y = waypoints[i][0], waypoints[i][1]
        if not ball_known_free(snap, x, y, safe_dist):
            return False
    return True


def backward_recover(history, t_back: float):
    """Reversed suffix of the executed trajectory with arc length >= t_back."""
    if not history:
        return []
    suffix = [history[-1]]
    length = 0.0
    for prev in reversed(history[:-1]):
        last = suffix[-1]
        length += math.hypot(last[0] - prev[0], last[1] - prev[1])
        suffix.append(prev)
        if length >= t_back:
            break
    return suffix


@dataclass
class FsmState:
    mode: str = EXPLORING
    waypoints: list | None = None      # committed path, [(x, y), ...]
    target: object = None
    history: list = field(default_factory=list)   # executed (x, y) trail
    recovery: list | None = None
    recover_count: int = 0
    halted: bool = False               # wedge flag used by the no-recovery mode
    stuck_ticks: int = 0
    transitions: list = field(default_factory=list)
    recovery_log: list = field(default_factory=list)

    def set_mode(self, tick: int, mode: str, trigger: str):
        if mode != self.mode:
            self.transitions.append((tick, self.mode, mode, trigger))
            self.mode = mode


def fsm_tick(state: FsmState, tick: int, snap: GridSnapshot, plan_fn,
             safe_dist: float, t_back: float, allow_recovery: bool = True) -> None:
    """One state-machine step: explore / execute-check / recover."""
    if state.halted:
        return
    if state.mode == EXPLORING:
        decision = plan_fn()
        if decision.status == "goto":
            state.waypoints = list(decision.waypoints)
            state.target = decision.target
            state.set_mode(tick, EXECUTING, "plan_success")
        elif decision.status == "complete":
            state.waypoints = None
            state.target = None
        else:
            state.waypoints = None
            state.target = None
            if allow_recovery:
                state.set_mode(tick, RECOVERING, "plan_failed")
            else:
                state.halted = True
    elif state.mode == EXECUTING:
        remaining = state.waypoints or []
        if not remaining:
            state.set_mode(tick, EXPLORING, "path_done")
            return
        if not backward_path_check(remaining, snap, safe_dist):
            state.set_mode(tick, EXPLORING, "path_unsafe")
    elif state.mode == RECOVERING:
        recovery = backward_recover(state.history, t_back)
        state.recovery = recovery if len(recovery) > 1 else None
        state.recovery_log.append((tick, list(recovery)))
        state.recover_count += 1
        state.waypoints = None
        state.target = None
        state.set_mode(tick, EXPLORING, "recovered")
