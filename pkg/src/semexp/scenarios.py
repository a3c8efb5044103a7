"""Bundled desk-scale scenario families (office, warehouse, factory).

Layouts are fixed per family; the run seed varies only the stochastic parts
of a run (sensor noise, roadmap sampling), which keeps the viewpoint
denominators scenario properties rather than run properties.
"""

from __future__ import annotations

from .geometry import Box, Pose
from .scenario import ScenarioSpec
from .sensor import SensorConfig

_H = 1.4          # scenario height, meters
_SENSOR_Z = 0.7


def _sensor(**kw) -> SensorConfig:
    base = dict(max_range=7.0, channels=16, h_steps=72)
    base.update(kw)
    return SensorConfig(**base)


def _tuning(region_grid: float, **extra) -> dict:
    """Desk-scale planning knobs shared by the bundled scenarios."""
    out = {
        "harness": {"region_grid": region_grid},
        "viewpoints": {"ig_mode": "scan"},
    }
    for section, values in extra.items():
        out.setdefault(section, {}).update(values)
    return out


def empty_room(side: float = 10.0, seed: int = 0) -> ScenarioSpec:
    return ScenarioSpec(
        name=f"empty_room_{int(side)}",
        bounds=Box((0, 0, 0), (side, side, _H)),
        start=Pose(1.2, 1.2, _SENSOR_Z),
        sensor=_sensor(),
        seed=seed,
        tuning=_tuning(max(side / 2.0, 5.0)),
    )


def single_object_room(seed: int = 0, noiseless: bool = True) -> ScenarioSpec:
    side = 10.0
    return ScenarioSpec(
        name="single_object",
        bounds=Box((0, 0, 0), (side, side, _H)),
        start=Pose(1.2, 1.2, _SENSOR_Z),
        objects=[("crate", Box((5.7, 5.7, 0.0), (6.3, 6.3, 0.6)))],
        sensor=_sensor(range_noise=0.0 if noiseless else 0.01),
        seed=seed,
        tuning=_tuning(5.0),
    )


def object_against_wall(seed: int = 0) -> ScenarioSpec:
    """One target hugging a wall: the wall-side sectors are unobservable."""
    side = 10.0
    return ScenarioSpec(
        name="object_against_wall",
        bounds=Box((0, 0, 0), (side, side, _H)),
        start=Pose(1.2, 1.2, _SENSOR_Z),
        objects=[("crate", Box((9.3, 4.7, 0.0), (9.9, 5.3, 0.6)))],
        sensor=_sensor(range_noise=0.0),
        seed=seed,
        tuning=_tuning(5.0),
    )


def office(seed: int = 0) -> ScenarioSpec:
    """Two-room office: a partition wall with a doorway, chairs as targets."""
    w = 16.0
    chairs = [
        Box((3.6, 3.6, 0.0), (4.1, 4.1, 0.8)),
        Box((11.8, 3.2, 0.0), (12.3, 3.7, 0.8)),
        Box((4.0, 12.0, 0.0), (4.5, 12.5, 0.8)),
        Box((12.0, 11.6, 0.0), (12.5, 12.1, 0.8)),
    ]
    return ScenarioSpec(
        name="office",
        bounds=Box((0, 0, 0), (w, w, _H)),
        start=Pose(1.0, 1.0, _SENSOR_Z),
        obstacles=[
            Box((7.6, 0.0, 0.0), (7.9, 5.6, _H)),     # partition, lower leg
            Box((7.6, 7.4, 0.0), (7.9, 16.0, _H)),    # partition, upper leg
            Box((0.0, 7.8, 0.0), (3.4, 8.1, _H)),     # side wall stub
            Box((11.9, 7.8, 0.0), (16.0, 8.1, _H)),   # side wall stub
        ],
        objects=[("chair", b) for b in chairs],
        sensor=_sensor(),
        seed=seed,
        tuning=_tuning(8.0),
    )


def warehouse(seed: int = 0) -> ScenarioSpec:
    """Aisles of full-height racking; forklifts parked in the open floor."""
    forklifts = [
        Box((3.4, 10.8, 0.0), (4.2, 11.4, 0.8)),
        Box((9.6, 10.6, 0.0), (10.4, 11.2, 0.8)),
        Box((15.0, 3.0, 0.0), (15.8, 3.6, 0.8)),
    ]
    return ScenarioSpec(
        name="warehouse",
        bounds=Box((0, 0, 0), (19.0, 14.0, _H)),
        start=Pose(1.0, 1.2, _SENSOR_Z),
        obstacles=[
            Box((3.0, 3.2, 0.0), (9.0, 4.0, _H)),     # rack row A
            Box((3.0, 6.6, 0.0), (9.0, 7.4, _H)),     # rack row B
            Box((12.0, 6.6, 0.0), (17.2, 7.4, _H)),   # rack row C
        ],
        objects=[("forklift", b) for b in forklifts],
        sensor=_sensor(),
        seed=seed,
        tuning=_tuning(7.0),
    )


def factory(seed: int = 0) -> ScenarioSpec:
    """Cluttered floor: pillars and machine blocks, mixed target objects."""
    return ScenarioSpec(
        name="factory",
        bounds=Box((0, 0, 0), (15.0, 15.0, _H)),
        start=Pose(1.0, 1.0, _SENSOR_Z),
        obstacles=[
            Box((4.6, 4.6, 0.0), (5.0, 5.0, _H)),     # pillar
            Box((10.0, 4.6, 0.0), (10.4, 5.0, _H)),   # pillar
            Box((4.6, 10.0, 0.0), (5.0, 10.4, _H)),   # pillar
            Box((10.0, 10.0, 0.0), (10.4, 10.4, _H)),  # pillar
            Box((6.6, 0.0, 0.0), (7.4, 2.6, _H)),     # machine row
            Box((0.0, 6.6, 0.0), (2.4, 7.4, _H)),     # machine row
        ],
        objects=[
            ("arm", Box((7.2, 7.2, 0.0), (7.8, 7.8, 0.8))),
            ("arm", Box((12.2, 12.2, 0.0), (12.8, 12.8, 0.8))),
            ("forklift", Box((12.0, 2.0, 0.0), (12.8, 2.6, 0.8))),
            ("forklift", Box((2.2, 12.2, 0.0), (3.0, 12.8, 0.8))),
        ],
        sensor=_sensor(),
        seed=seed,
        tuning=_tuning(7.5),
    )


FAMILIES = {
    "office": office,
    "warehouse": warehouse,
    "factory": factory,
}


def make(name: str, seed: int = 0) -> ScenarioSpec:
    extra = {
        "empty_room": empty_room,
        "single_object": single_object_room,
        "object_against_wall": object_against_wall,
    }
    table = {**FAMILIES, **extra}
    if name not in table:
        raise KeyError(f"unknown scenario {name!r}; have {sorted(table)}")
    spec = table[name](seed=seed)
    spec.seed = seed
    return spec
