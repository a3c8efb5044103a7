"""Independent brute-force oracles the fast implementations are checked against.

Everything here favors obviousness over speed and shares no code with the
production paths it verifies.
"""

from __future__ import annotations

import math

import numpy as np


def segment_voxels_bruteforce(origin, end, grid_origin, resolution, dims, eps=1e-12):
    """All voxels whose interior the segment crosses, by per-voxel slab tests."""
    origin = np.asarray(origin, dtype=float)
    end = np.asarray(end, dtype=float)
    d = end - origin
    cells = set()
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2]):
                lo = np.asarray(grid_origin) + np.array([i, j, k]) * resolution
                hi = lo + resolution
                t0, t1 = 0.0, 1.0
                ok = True
                for ax in range(3):
                    if d[ax] == 0.0:
                        if origin[ax] < lo[ax] or origin[ax] > hi[ax]:
                            ok = False
                            break
                    else:
                        ta = (lo[ax] - origin[ax]) / d[ax]
                        tb = (hi[ax] - origin[ax]) / d[ax]
                        if ta > tb:
                            ta, tb = tb, ta
                        t0 = max(t0, ta)
                        t1 = min(t1, tb)
                if ok and t1 - t0 > eps:
                    cells.add((i, j, k))
    return cells


def logodds_sequence(p0_logodds, updates, lo_min, lo_max):
    """Scalar clamped log-odds accumulation for a single voxel."""
    lo = p0_logodds
    for u in updates:
        lo = min(max(lo + u, lo_min), lo_max)
    return lo


def dbscan_bruteforce(points, eps, min_pts):
    """Textbook density clustering via O(n^2) scans; returns labels, -1 = noise."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    neighbors = [np.nonzero(dist[i] <= eps)[0].tolist() for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbors]
    labels = [-1] * n
    cluster = 0
    for s in range(n):
        if labels[s] != -1 or not core[s]:
            continue
        queue = [s]
        labels[s] = cluster
        while queue:
            q = queue.pop(0)
            if not core[q]:
                continue
            for nb in neighbors[q]:
                if labels[nb] == -1:
                    labels[nb] = cluster
                    if core[nb]:
                        queue.append(nb)
        cluster += 1
    return labels


def visible_unknown_bruteforce(snapshot, eye, max_range, v_half):
    """Per-voxel exhaustive visibility count of unknown voxels from a pose.

    Line-of-sight cells come from per-voxel slab tests over the segment's
    bounding sub-box, independent of any stepping traversal.
    """
    from semexp.grid import UNKNOWN, OCCUPIED

    eye = np.asarray(eye, dtype=float)
    res = snapshot.resolution
    origin = np.asarray(snapshot.origin, dtype=float)
    count = 0
    for idx in np.argwhere(snapshot.classes == UNKNOWN):
        c = snapshot.voxel_center(idx)
        delta = c - eye
        dist = float(np.linalg.norm(delta))
        if dist > max_range or dist == 0.0:
            continue
        horiz = math.hypot(delta[0], delta[1])
        if horiz == 0.0 or abs(math.atan2(delta[2], horiz)) > v_half:
            continue
        vi_eye = np.floor((eye - origin) / res).astype(int)
        sub_lo = np.minimum(vi_eye, idx)
        sub_hi = np.maximum(vi_eye, idx) + 1
        sub_dims = sub_hi - sub_lo
        cells = segment_voxels_bruteforce(
            eye - origin - sub_lo * res, c - origin - sub_lo * res,
            (0.0, 0.0, 0.0), res, tuple(sub_dims),
        )
        blocked = False
        for cell in cells:
            v = tuple(np.asarray(cell) + sub_lo)
            if v == tuple(idx) or not snapshot.in_bounds(v):
                continue
            if snapshot.classes[v] == OCCUPIED:
                blocked = True
                break
        if not blocked:
            count += 1
    return count


def tsp_bruteforce(cost):
    """Optimal open tour from node 0 by enumerating all permutations.

    Enumeration is the oracle; numpy only batches the per-permutation sums.
    """
    import itertools

    k = cost.shape[0] - 1
    perms = np.array(list(itertools.permutations(range(1, k + 1))), dtype=int)
    cols = np.concatenate([np.zeros((len(perms), 1), dtype=int), perms], axis=1)
    totals = cost[cols[:, :-1], cols[:, 1:]].sum(axis=1)
    best = int(np.argmin(totals))
    return float(totals[best]), list(perms[best])


def min_set_cover_bruteforce(universe, sets_by_id):
    """Smallest subset of candidate ids whose union covers the coverable part."""
    import itertools

    ids = sorted(sets_by_id)
    coverable = set()
    for i in ids:
        coverable |= sets_by_id[i] & universe
    for size in range(len(ids) + 1):
        for combo in itertools.combinations(ids, size):
            covered = set()
            for i in combo:
                covered |= sets_by_id[i]
            if coverable <= covered:
                return size, list(combo)
    return len(ids), ids
