"""Shared grid/world builders for unit tests."""

import numpy as np

from semexp.config import MappingConfig
from semexp.grid import VoxelGrid


def synthetic_grid(dims, origin=(0.0, 0.0, 0.0), fill="unknown"):
    """A grid with every voxel forced to one class; mutate arrays to shape it."""
    g = VoxelGrid(origin, dims, MappingConfig())
    if fill == "free":
        g.log_odds[:] = -1.5
        g.touched[:] = True
    elif fill == "occupied":
        g.log_odds[:] = 3.0
        g.touched[:] = True
    return g


def set_free(g, sel):
    g.log_odds[sel] = -1.5
    g.touched[sel] = True


def set_occupied(g, sel):
    g.log_odds[sel] = 3.0
    g.touched[sel] = True


def set_unknown(g, sel):
    g.log_odds[sel] = 0.0
    g.touched[sel] = False


def observe_world(world, poses, sensor_cfg, seed=0):
    """Integrate simulated scans from the given poses into a fresh grid."""
    from semexp.sensor import simulate_scan

    g = VoxelGrid(world.origin, world.dims, world.mapping)
    for k, pose in enumerate(poses):
        scan = simulate_scan(world, pose, sensor_cfg, rng_seed=seed + k)
        if not scan.degenerate:
            g.integrate_scan(scan.origin, scan.points, scan.is_max_range)
    return g


def planar_snapshot(grid, plan_z=None, z_lo=0.15, z_hi=None):
    """Snapshot with traversability masks ready for planning calls."""
    snap = grid.snapshot()
    if plan_z is None:
        plan_z = float(grid.origin[2] + grid.dims[2] * grid.resolution / 2.0)
    if z_hi is None:
        z_hi = plan_z + 0.2
    snap.build_planar(z_lo, z_hi, plan_z)
    return snap
