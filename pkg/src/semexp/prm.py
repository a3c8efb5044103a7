"""Two-level probabilistic roadmap over free and assumed-free space.

The dense level supports local path planning; a sub-sampled node subset acts
as geometric viewpoint candidates. In aggressive mode nodes may sit in unknown
space and edges may cross it; known-occupied space is always forbidden.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .config import PrmConfig
from .grid import GridSnapshot, traverse_segments


def _planar(snap: GridSnapshot):
    if snap.blocked_xy is None:
        raise RuntimeError("snapshot needs build_planar() before planning")
    return snap.blocked_xy, snap.free_xy


def segment_cells_xy(snap: GridSnapshot, p0, p1):
    """(x, y) voxel columns crossed by the straight segment at plan height."""
    z = snap.plan_z if snap.plan_z is not None else snap.origin[2]
    a = np.array([p0[0], p0[1], z])
    b = np.array([p1[0], p1[1], z])
    visited, _, _ = traverse_segments(a, [b], snap.origin, snap.resolution, snap.dims)
    return visited[:, :2] if len(visited) else visited.reshape(0, 2)


def edge_clear(snap: GridSnapshot, p0, p1, z: float = 0.0,
               aggressive: bool = True) -> bool:
    """Straight segment validity over the robot's height column."""
    blocked, free = _planar(snap)
    cells = segment_cells_xy(snap, p0, p1)
    if len(cells) == 0:
        return False  # entirely outside the mapped volume
    cols = tuple(cells.T)
    if aggressive:
        return not bool(blocked[cols].any())
    return bool(free[cols].all())


def point_clear(snap: GridSnapshot, x: float, y: float, z: float = 0.0,
                aggressive: bool = True) -> bool:
    blocked, free = _planar(snap)
    v = snap.world_to_voxel((x, y, snap.plan_z))
    if not snap.in_bounds(v):
        return False
    if aggressive:
        return not bool(blocked[v[0], v[1]])
    return bool(free[v[0], v[1]])


def _ball_offsets(resolution: float, radius: float):
    r_vox = int(math.ceil(radius / resolution))
    return [
        (dx, dy)
        for dx in range(-r_vox, r_vox + 1)
        for dy in range(-r_vox, r_vox + 1)
        if math.hypot(dx, dy) * resolution <= radius + 1e-9
    ]


def clearance_ok(snap: GridSnapshot, p0, p1, z: float, safe_dist: float) -> bool:
    """True when no known-occupied column lies within `safe_dist` of the segment."""
    blocked, _ = _planar(snap)
    length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    steps = max(int(length / (snap.resolution * 0.5)), 1)
    xs = np.linspace(p0[0], p1[0], steps + 1)
    ys = np.linspace(p0[1], p1[1], steps + 1)
    xi = np.floor((xs - snap.origin[0]) / snap.resolution).astype(int)
    yi = np.floor((ys - snap.origin[1]) / snap.resolution).astype(int)
    nx, ny = int(snap.dims[0]), int(snap.dims[1])
    for dx, dy in _ball_offsets(snap.resolution, safe_dist):
        qx = np.clip(xi + dx, 0, nx - 1)
        qy = np.clip(yi + dy, 0, ny - 1)
        if blocked[qx, qy].any():
            return False
    return True


def ball_known_free(snap: GridSnapshot, x: float, y: float, safe_dist: float) -> bool:
    """Every column within `safe_dist` of (x, y) is known-free traversable."""
    _, free = _planar(snap)
    nx, ny = int(snap.dims[0]), int(snap.dims[1])
    xi = int(math.floor((x - snap.origin[0]) / snap.resolution))
    yi = int(math.floor((y - snap.origin[1]) / snap.resolution))
    for dx, dy in _ball_offsets(snap.resolution, safe_dist):
        qx, qy = xi + dx, yi + dy
        if not (0 <= qx < nx and 0 <= qy < ny):
            return False
        if not free[qx, qy]:
            return False
    return True


class PrmGraph:
    """Dense roadmap with spatial hashing for neighbor lookups."""

    def __init__(self, cfg: PrmConfig, z: float):
        self.cfg = cfg
        self.z = float(z)
        self.pos: dict[int, tuple] = {}
        self.adj: dict[int, dict] = {}
        self.node_class: dict[int, int] = {}
        self._cells: dict[tuple, set] = {}
        self.next_id = 0

    def _cell(self, x: float, y: float) -> tuple:
        r = self.cfg.connection_radius
        return (int(math.floor(x / r)), int(math.floor(y / r)))

    def __len__(self) -> int:
        return len(self.pos)

    def add_node(self, x: float, y: float, node_class: int) -> int:
        nid = self.next_id
        self.next_id += 1
        self.pos[nid] = (float(x), float(y))
        self.adj[nid] = {}
        self.node_class[nid] = node_class
        self._cells.setdefault(self._cell(x, y), set()).add(nid)
        return nid

    def remove_node(self, nid: int) -> None:
        x, y = self.pos.pop(nid)
        for nbr in list(self.adj[nid]):
            del self.adj[nbr][nid]
        del self.adj[nid]
        del self.node_class[nid]
        self._cells[self._cell(x, y)].discard(nid)

    def neighbors_within(self, x: float, y: float, radius: float):
        cx, cy = self._cell(x, y)
        out = []
        reach = int(math.ceil(radius / self.cfg.connection_radius))
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for nid in self._cells.get((cx + dx, cy + dy), ()):
                    px, py = self.pos[nid]
                    if math.hypot(px - x, py - y) <= radius:
                        out.append(nid)
        return sorted(out)

    def connect(self, nid: int, snap: GridSnapshot, aggressive: bool) -> None:
        x, y = self.pos[nid]
        for nbr in self.neighbors_within(x, y, self.cfg.connection_radius):
            if nbr == nid or nbr in self.adj[nid]:
                continue
            if edge_clear(snap, (x, y), self.pos[nbr], self.z, aggressive):
                d = math.hypot(self.pos[nbr][0] - x, self.pos[nbr][1] - y)
                self.adj[nid][nbr] = d
                self.adj[nbr][nid] = d

    def maintain(self, snap: GridSnapshot, lph, rng, aggressive: bool) -> None:
        """Prune newly invalid nodes/edges inside the horizon, then sample.

        Sampling prefers cells with the fewest nodes (adaptive density) and
        runs in both free and unknown space when aggressive.
        """
        x0, y0, x1, y1 = lph
        in_lph = [
            nid for nid, (x, y) in sorted(self.pos.items())
            if x0 <= x <= x1 and y0 <= y <= y1
        ]
        for nid in in_lph:
            x, y = self.pos[nid]
            if not point_clear(snap, x, y, self.z, aggressive=True):
                self.remove_node(nid)
                continue
            v = snap.world_to_voxel((x, y, self.z))
            self.node_class[nid] = int(snap.classes[tuple(v)])
        for nid in [n for n in in_lph if n in self.pos]:
            x, y = self.pos[nid]
            for nbr in sorted(self.adj[nid]):
                if nbr < nid and nbr in self.pos:
                    continue  # handled from the other endpoint
                if not edge_clear(snap, (x, y), self.pos[nbr], self.z, aggressive):
                    del self.adj[nid][nbr]
                    del self.adj[nbr][nid]

        cell = self.cfg.sample_cell
        counts: dict[tuple, int] = {}
        for nid, (x, y) in self.pos.items():
            if x0 <= x <= x1 and y0 <= y <= y1:
                key = (int((x - x0) / cell), int((y - y0) / cell))
                counts[key] = counts.get(key, 0) + 1
        nx = max(int(math.ceil((x1 - x0) / cell)), 1)
        ny = max(int(math.ceil((y1 - y0) / cell)), 1)
        deficits = []
        for j in range(ny):
            for i in range(nx):
                have = counts.get((i, j), 0)
                if have < self.cfg.target_per_cell:
                    deficits.append((have, (i, j)))
        deficits.sort()
        budget = self.cfg.samples_per_update
        for _, (i, j) in deficits:
            if budget <= 0:
                break
            for _ in range(self.cfg.target_per_cell - counts.get((i, j), 0)):
                if budget <= 0:
                    break
                sx = x0 + (i + rng.random()) * cell
                sy = y0 + (j + rng.random()) * cell
                if sx > x1 or sy > y1:
                    continue
                budget -= 1
                if not point_clear(snap, sx, sy, self.z, aggressive):
                    continue
                if self.neighbors_within(sx, sy, self.cfg.min_node_spacing):
                    continue
                v = snap.world_to_voxel((sx, sy, self.z))
                nid = self.add_node(sx, sy, int(snap.classes[tuple(v)]))
                self.connect(nid, snap, aggressive)

    # -- search -----------------------------------------------------------

    def astar(self, snap: GridSnapshot, start_xy, goal_xy, aggressive: bool):
        """Shortest path between arbitrary positions via temporary endpoints.

        Returns a list of (x, y) waypoints including both endpoints, or None.
        """
        radius = self.cfg.connection_radius
        start_links = {
            nid: math.hypot(self.pos[nid][0] - start_xy[0], self.pos[nid][1] - start_xy[1])
            for nid in self.neighbors_within(*start_xy, radius)
            if edge_clear(snap, start_xy, self.pos[nid], self.z, aggressive)
        }
        goal_links = {
            nid: math.hypot(self.pos[nid][0] - goal_xy[0], self.pos[nid][1] - goal_xy[1])
            for nid in self.neighbors_within(*goal_xy, radius)
            if edge_clear(snap, goal_xy, self.pos[nid], self.z, aggressive)
        }
        if edge_clear(snap, start_xy, goal_xy, self.z, aggressive) and (
            math.hypot(goal_xy[0] - start_xy[0], goal_xy[1] - start_xy[1]) <= radius
        ):
            return [tuple(start_xy), tuple(goal_xy)]
        if not start_links or not goal_links:
            return None

        def h(nid):
            x, y = self.pos[nid]
            return math.hypot(goal_xy[0] - x, goal_xy[1] - y)

        dist = {nid: d for nid, d in start_links.items()}
        prev: dict[int, int | None] = {nid: None for nid in start_links}
        heap = [(d + h(nid), nid) for nid, d in sorted(start_links.items())]
        heapq.heapify(heap)
        closed = set()
        best_goal, best_cost = None, math.inf
        while heap:
            f, nid = heapq.heappop(heap)
            if nid in closed:
                continue
            closed.add(nid)
            d = dist[nid]
            if nid in goal_links and d + goal_links[nid] < best_cost:
                best_cost = d + goal_links[nid]
                best_goal = nid
            if f >= best_cost:
                break
            for nbr, w in sorted(self.adj[nid].items()):
                nd = d + w
                if nd < dist.get(nbr, math.inf):
                    dist[nbr] = nd
                    prev[nbr] = nid
                    heapq.heappush(heap, (nd + h(nbr), nbr))
        if best_goal is None:
            return None
        chain = [best_goal]
        while prev[chain[-1]] is not None:
            chain.append(prev[chain[-1]])
        chain.reverse()
        return [tuple(start_xy)] + [self.pos[n] for n in chain] + [tuple(goal_xy)]

    def shortcut(self, snap: GridSnapshot, waypoints, aggressive: bool,
                 safe_dist: float):
        """Greedy skip of intermediate waypoints under a clearance margin."""
        if waypoints is None or len(waypoints) <= 2:
            return waypoints
        out = [waypoints[0]]
        i = 0
        while i < len(waypoints) - 1:
            j = len(waypoints) - 1
            advanced = False
            while j > i + 1:
                if edge_clear(snap, waypoints[i], waypoints[j], self.z, aggressive) and \
                        clearance_ok(snap, waypoints[i], waypoints[j], self.z, safe_dist):
                    out.append(waypoints[j])
                    i = j
                    advanced = True
                    break
                j -= 1
            if not advanced:
                out.append(waypoints[i + 1])
                i += 1
        return out

    def validate_edges(self, snap: GridSnapshot) -> int:
        """Count edges crossing known-occupied columns (invariant check)."""
        blocked, _ = _planar(snap)
        bad = 0
        for nid, nbrs in self.adj.items():
            for nbr in nbrs:
                if nbr < nid:
                    continue
                cells = segment_cells_xy(snap, self.pos[nid], self.pos[nbr])
                if len(cells) and blocked[tuple(cells.T)].any():
                    bad += 1
        return bad
