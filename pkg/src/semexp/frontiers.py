"""Frontier detection and fixed-tile exploration regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import FREE, UNKNOWN, GridSnapshot


def detect_frontiers(snap: GridSnapshot, slab_z: int | None = None,
                     min_cluster: int = 1, adjacency: str = "planar") -> set:
    """Free voxels adjacent to at least one unknown voxel.

    With `slab_z` set, only frontiers in that voxel layer are returned (planar
    robot). Planar adjacency looks at the four in-layer neighbors, which keeps
    the sparse between-ring unknown cells above and below the sensor plane
    from creating frontiers the robot is already standing on; "full" uses all
    six neighbors. Clusters smaller than `min_cluster` (4-connected within the
    layer) are treated as sensor noise.
    """
    classes = snap.classes
    free = classes == FREE
    unknown = classes == UNKNOWN

    pad = np.pad(unknown, 1, constant_values=False)
    near_unknown = (
        pad[2:, 1:-1, 1:-1] | pad[:-2, 1:-1, 1:-1]
        | pad[1:-1, 2:, 1:-1] | pad[1:-1, :-2, 1:-1]
    )
    if adjacency == "full" or slab_z is None:
        near_unknown = near_unknown | pad[1:-1, 1:-1, 2:] | pad[1:-1, 1:-1, :-2]
    frontier = free & near_unknown
    if slab_z is not None:
        layer = np.zeros_like(frontier)
        layer[:, :, slab_z] = frontier[:, :, slab_z]
        frontier = layer

    if min_cluster > 1:
        if slab_z is not None:
            plane = frontier[:, :, slab_z]
            labels, n = ndimage.label(plane)
            keep = np.zeros_like(plane)
            for lab in range(1, n + 1):
                sel = labels == lab
                if sel.sum() >= min_cluster:
                    keep |= sel
            frontier = np.zeros_like(frontier)
            frontier[:, :, slab_z] = keep
        else:
            labels, n = ndimage.label(frontier)
            keep = np.zeros_like(frontier)
            for lab in range(1, n + 1):
                sel = labels == lab
                if sel.sum() >= min_cluster:
                    keep |= sel
            frontier = keep

    return {tuple(v) for v in np.argwhere(frontier)}


@dataclass
class Region:
    region_id: int
    bounds_xy: tuple          # (x0, y0, x1, y1)
    frontiers: set = field(default_factory=set)
    semantic_vps: list = field(default_factory=list)
    blocked_streak: int = 0
    dropped: bool = False

    @property
    def active(self) -> bool:
        if self.dropped:
            return False
        return bool(self.frontiers) or bool(self.semantic_vps)

    def contains_xy(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds_xy
        return x0 <= x < x1 and y0 <= y < y1

    def center_xy(self):
        x0, y0, x1, y1 = self.bounds_xy
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0


class RegionGrid:
    """Partition of the scenario bounds into square exploration tiles."""

    def __init__(self, bounds, tile: float):
        self.tile = float(tile)
        self.x0, self.y0 = bounds.lo[0], bounds.lo[1]
        self.nx = max(int(math.ceil((bounds.hi[0] - self.x0) / tile - 1e-9)), 1)
        self.ny = max(int(math.ceil((bounds.hi[1] - self.y0) / tile - 1e-9)), 1)
        self.regions = []
        for j in range(self.ny):
            for i in range(self.nx):
                rid = j * self.nx + i
                x0 = self.x0 + i * tile
                y0 = self.y0 + j * tile
                self.regions.append(Region(rid, (x0, y0, x0 + tile, y0 + tile)))

    def region_of_xy(self, x: float, y: float) -> Region:
        i = min(max(int((x - self.x0) / self.tile), 0), self.nx - 1)
        j = min(max(int((y - self.y0) / self.tile), 0), self.ny - 1)
        return self.regions[j * self.nx + i]

    def refresh(self, snap: GridSnapshot, frontier_voxels: set, semantic_vps) -> None:
        """Re-bin frontiers and pending semantic viewpoints into regions."""
        for region in self.regions:
            region.frontiers = set()
            region.semantic_vps = []
        for v in frontier_voxels:
            c = snap.voxel_center(np.asarray(v))
            self.region_of_xy(c[0], c[1]).frontiers.add(tuple(v))
        for vp in semantic_vps:
            self.region_of_xy(vp.pose.x, vp.pose.y).semantic_vps.append(vp)

    def active_regions(self):
        return [r for r in self.regions if r.active]

    def all_inactive(self) -> bool:
        return not self.active_regions()
