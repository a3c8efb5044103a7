"""Declarative scenario files and the ground-truth world built from them.

Scenario files are versioned YAML (`schema: 1`):

    schema: 1
    name: office_a
    seed: 0
    bounds: {lo: [0, 0, 0], hi: [18, 18, 1.4]}
    start: {x: 1.2, y: 1.2, z: 0.7, yaw: 0.0}
    kinematics: {v: 1.5, omega: 1.5}
    sensor: {max_range: 8.0}         # optional SensorConfig overrides
    obstacles:
      - {lo: [4, 0, 0], hi: [4.3, 6, 1.4]}
    objects:
      - {label: chair, lo: [7, 7, 0], hi: [7.5, 7.5, 0.9]}
    tuning: {harness: {region_grid: 9.0}}   # optional config overrides
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy import ndimage

from .config import MappingConfig, SystemConfig
from .geometry import Box, Pose
from .sensor import SensorConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    name: str
    bounds: Box
    start: Pose
    obstacles: list = field(default_factory=list)
    objects: list = field(default_factory=list)   # (label, Box) pairs
    sensor: SensorConfig = field(default_factory=SensorConfig)
    v: float = 1.5        # expected linear velocity, m/s
    omega: float = 1.5    # expected angular velocity, rad/s
    seed: int = 0
    tuning: dict = field(default_factory=dict)

    def validate(self) -> list:
        """Raise on contract violations; return a list of soft warnings."""
        warnings = []
        if not self.bounds.contains(self.start.xyz):
            raise ScenarioError("start pose outside scenario bounds")
        for box in self.obstacles:
            if box.contains(self.start.xyz):
                raise ScenarioError("start pose inside an obstacle")
        for label, box in self.objects:
            if box.contains(self.start.xyz):
                raise ScenarioError(f"start pose inside object {label!r}")
            for obs in self.obstacles:
                if box.intersection_volume(obs) > 0:
                    raise ScenarioError(f"object {label!r} overlaps an obstacle")
        for label, box in self.objects:
            if box.hi[2] < self.start.z:
                warnings.append(
                    f"object {label!r} is shorter than the sensor height; "
                    "planar collision checks will not see it"
                )
        if self.v <= 0 or self.omega <= 0:
            raise ScenarioError("kinematic velocities must be positive")
        return warnings


def _box_from(node) -> Box:
    return Box(tuple(node["lo"]), tuple(node["hi"]))


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"scenario file must declare 'schema: {SCHEMA_VERSION}'")
    try:
        sensor = SensorConfig(**(data.get("sensor") or {}))
        start = data["start"]
        kin = data.get("kinematics") or {}
        spec = ScenarioSpec(
            name=data.get("name", "unnamed"),
            bounds=_box_from(data["bounds"]),
            start=Pose(start["x"], start["y"], start["z"], start.get("yaw", 0.0)),
            obstacles=[_box_from(b) for b in data.get("obstacles") or []],
            objects=[(o["label"], _box_from(o)) for o in data.get("objects") or []],
            sensor=sensor,
            v=float(kin.get("v", 1.5)),
            omega=float(kin.get("omega", 1.5)),
            seed=int(data.get("seed", 0)),
            tuning=data.get("tuning") or {},
        )
    except KeyError as missing:
        raise ScenarioError(f"scenario file missing field {missing}") from None
    spec.validate()
    return spec


def save_scenario(spec: ScenarioSpec, path) -> None:
    data = {
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "seed": spec.seed,
        "bounds": {"lo": list(spec.bounds.lo), "hi": list(spec.bounds.hi)},
        "start": {
            "x": spec.start.x, "y": spec.start.y,
            "z": spec.start.z, "yaw": spec.start.yaw,
        },
        "kinematics": {"v": spec.v, "omega": spec.omega},
        "sensor": dataclasses.asdict(spec.sensor),
        "obstacles": [{"lo": list(b.lo), "hi": list(b.hi)} for b in spec.obstacles],
        "objects": [
            {"label": label, "lo": list(b.lo), "hi": list(b.hi)}
            for label, b in spec.objects
        ],
    }
    if spec.tuning:
        data["tuning"] = spec.tuning
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def apply_tuning(cfg: SystemConfig, spec: ScenarioSpec) -> SystemConfig:
    """Overlay a scenario's tuning block onto a config (returns a new config)."""
    import copy

    out = copy.deepcopy(cfg)
    for section, values in (spec.tuning or {}).items():
        if not hasattr(out, section):
            raise ScenarioError(f"unknown tuning section: {section}")
        target = getattr(out, section)
        for key, val in (values or {}).items():
            if not hasattr(target, key):
                raise ScenarioError(f"unknown tuning key: {section}.{key}")
            setattr(target, key, val)
    return out


@dataclass
class WorldObject:
    index: int
    label: str
    box: Box
    surface_points: np.ndarray


def _sample_box_surface(box: Box, step: float) -> np.ndarray:
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    pts = []
    for axis in range(3):
        u, w = (axis + 1) % 3, (axis + 2) % 3
        nu = max(int(np.ceil((hi[u] - lo[u]) / step)) + 1, 2)
        nw = max(int(np.ceil((hi[w] - lo[w]) / step)) + 1, 2)
        us = np.linspace(lo[u], hi[u], nu)
        ws = np.linspace(lo[w], hi[w], nw)
        uu, ww = np.meshgrid(us, ws, indexing="ij")
        for value in (lo[axis], hi[axis]):
            face = np.empty((uu.size, 3))
            face[:, axis] = value
            face[:, u] = uu.ravel()
            face[:, w] = ww.ravel()
            pts.append(face)
    return np.unique(np.concatenate(pts, axis=0), axis=0)


class World:
    """Ground truth used by the simulated sensors and by post-hoc audits."""

    def __init__(self, spec: ScenarioSpec, mapping: MappingConfig | None = None,
                 surface_step: float = 0.06):
        self.spec = spec
        self.mapping = mapping or MappingConfig()
        self.resolution = self.mapping.resolution
        solids = list(spec.obstacles) + [b for _, b in spec.objects]
        self.solid_lo = np.array([b.lo for b in solids]).reshape(-1, 3)
        self.solid_hi = np.array([b.hi for b in solids]).reshape(-1, 3)
        self.objects = [
            WorldObject(i, label, box, _sample_box_surface(box, surface_step))
            for i, (label, box) in enumerate(spec.objects)
        ]
        self.origin = np.asarray(spec.bounds.lo, dtype=float)
        self.dims = np.maximum(
            np.ceil((np.asarray(spec.bounds.hi) - self.origin) / self.resolution - 1e-9),
            1,
        ).astype(np.int64)
        self._solid_mask = None
        self._reachable = None

    # -- voxel-level truth --------------------------------------------------

    def world_to_voxel(self, p):
        return np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(np.int64)

    def voxel_center(self, v):
        return self.origin + (np.asarray(v, dtype=float) + 0.5) * self.resolution

    @property
    def solid_mask(self) -> np.ndarray:
        """True where the voxel center lies inside any obstacle or object box."""
        if self._solid_mask is None:
            mask = np.zeros(tuple(self.dims), dtype=bool)
            if len(self.solid_lo):
                axes = [
                    self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.resolution
                    for a in range(3)
                ]
                for lo, hi in zip(self.solid_lo, self.solid_hi):
                    sel = [
                        (axes[a] >= lo[a]) & (axes[a] <= hi[a]) for a in range(3)
                    ]
                    mask |= sel[0][:, None, None] & sel[1][None, :, None] & sel[2][None, None, :]
            self._solid_mask = mask
        return self._solid_mask

    @property
    def reachable_mask(self) -> np.ndarray:
        """Voxels connected to the start through non-solid space (6-connectivity)."""
        if self._reachable is None:
            free = ~self.solid_mask
            structure = ndimage.generate_binary_structure(3, 1)
            labels, _ = ndimage.label(free, structure=structure)
            start_voxel = tuple(self.world_to_voxel(self.spec.start.xyz))
            start_label = labels[start_voxel]
            if start_label == 0:
                raise ScenarioError("start voxel is inside solid geometry")
            self._reachable = labels == start_label
        return self._reachable

    # -- geometric queries ----------------------------------------------------

    def point_in_solid(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if len(self.solid_lo) == 0:
            return False
        inside = np.all(p >= self.solid_lo, axis=1) & np.all(p <= self.solid_hi, axis=1)
        return bool(inside.any())

    def column_collides(self, x: float, y: float) -> bool:
        """Ground-truth collision of the robot column footprint at (x, y)."""
        if not self.spec.bounds.contains_xy(x, y):
            return True
        if len(self.solid_lo) == 0:
            return False
        inside = (
            (x >= self.solid_lo[:, 0]) & (x <= self.solid_hi[:, 0])
            & (y >= self.solid_lo[:, 1]) & (y <= self.solid_hi[:, 1])
        )
        return bool(inside.any())

    def truth_grid(self):
        """A fully known grid mirroring the solid mask (for oracles and tests)."""
        from .grid import VoxelGrid

        g = VoxelGrid(self.origin, self.dims, self.mapping)
        g.log_odds[:] = self.mapping.log_odds_min
        g.log_odds[self.solid_mask] = self.mapping.log_odds_max
        g.touched[:] = True
        return g
