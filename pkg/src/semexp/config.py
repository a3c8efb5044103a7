"""Central configuration with documented defaults; every tunable lives here."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml


@dataclass
class MappingConfig:
    resolution: float = 0.1          # voxel edge, meters
    log_odds_hit: float = 0.85       # increment for an occupied endpoint
    log_odds_free: float = 0.4       # decrement for a traversed voxel
    log_odds_min: float = -2.0
    log_odds_max: float = 3.5
    occupied_threshold: float = 0.7  # probability at or above -> occupied
    unknown_eps: float = 0.01        # half-width of unknown probability band


@dataclass
class SemanticConfig:
    sectors: int = 8                 # observation spaces per object
    radius: float = 2.5              # observation space radius, meters
    model_resolution: float = 0.1    # coarse object-model voxel edge
    iou_threshold: float = 0.3       # data-association gate
    score_valid_frac: float = 0.5    # T_score = frac * median per-label mask volume
    score_threshold: float | None = None  # absolute override for T_score
    keyframe_keep_prob: float = 0.5  # minimum Bernoulli validity ratio
    merge_iomin: float = 0.5
    recenter_dist_factor: float = 2.0  # T_doc = factor * resolution
    p_inc: float = 0.2
    p_dec: float = 0.2
    belief_init: float = 0.5
    belief_min: float = 0.01
    belief_max: float = 0.99
    belief_confident: float = 0.6    # voxels at/above count as object support
    update_every_ticks: int = 5
    mask_dilate_px: int = 3          # keyframe mask dilation for reprojection tests
    min_cloud_points: int = 5
    dense_min_pts_voxel: int = 3
    cluster_eps: float = 0.3
    cluster_min_pts: int = 5
    ground_z: float = 0.02           # points at or below are dropped before clustering


@dataclass
class ViewpointConfig:
    r_min: float = 0.5               # first centerline candidate distance
    step: float = 0.25               # centerline candidate spacing
    obs_threshold_mode: str = "relative"   # relative | absolute
    obs_threshold_rel: float = 0.6   # T_obs = rel * best candidate score
    obs_threshold_abs: float = 500.0
    occlusion_min_visible: float = 0.95    # world-visible fraction below -> occluded
    complete_min_frac: float = 0.98        # voxel fraction that must fit FOV + range
    register_cell: float = 1.0       # 2D registration grid resolution g
    vp_subsample_cell: float = 2.0   # geometric viewpoint density control
    ig_slab_half: int | None = None  # None = full 3D information gain
    ig_stride: int = 1
    ig_mode: str = "exact"           # exact (per-voxel) | scan (ray bundle)
    ig_scan_azimuths: int = 60
    ig_scan_elevations: int = 5


@dataclass
class PrmConfig:
    connection_radius: float = 2.0
    sample_cell: float = 1.5         # adaptive-sampling density cell
    target_per_cell: int = 2
    min_node_spacing: float = 0.45
    samples_per_update: int = 30
    lph_half_extent: float = 6.0     # local planning horizon half-size, meters


@dataclass
class SamplerConfig:
    min_cov: int = 3                 # minimum incremental frontier coverage to accept
    coverage_range_frac: float = 0.6  # frontier counts as covered within this
                                      # fraction of max range (unknown space
                                      # behind it must be observable too)
    reward_eps_frac: float = 0.01    # stop when reward < frac * top initial reward
    turn_cost_mode: str = "verbatim"  # verbatim | delta_heading
    lgs_semantic_weight: float = 2.0


@dataclass
class PlannerConfig:
    time_cost_coeff: float = 1.5     # c in the inter-viewpoint cost
    exact_cutoff: int = 9            # exhaustive solve up to this many viewpoints
    unreachable_cost: float = 1.0e6


@dataclass
class FsmConfig:
    t_back: float = 1.5              # recovery backtrack arc length, meters
    safe_dist: float = 0.1           # clearance ball for path checks and shortcuts
    stuck_ticks: int = 12            # blocked motion ticks before pseudo-collision


@dataclass
class HarnessConfig:
    dt: float = 0.1                  # simulated seconds per tick
    tick_budget: int = 20000
    plan_every_ticks: int = 5
    detect_every_ticks: int = 2
    region_grid: float = 10.0        # exploration region tile size
    frontier_min_cluster: int = 3
    frontier_mode: str = "slab"      # slab | full3d
    yaw_gate: float = 0.6            # rad; rotate in place above this heading error
    blocked_region_patience: int = 25
    inject_pseudo_collisions: bool = False
    inject_every_ticks: int = 150
    inject_radius: float = 0.7
    method: str = "pdls"             # pdls | lgs | no_agc | no_sm


@dataclass
class SystemConfig:
    mapping: MappingConfig = field(default_factory=MappingConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    viewpoints: ViewpointConfig = field(default_factory=ViewpointConfig)
    prm: PrmConfig = field(default_factory=PrmConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    fsm: FsmConfig = field(default_factory=FsmConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def replace(self, **section_overrides) -> "SystemConfig":
        return dataclasses.replace(self, **section_overrides)


def _apply(section, values: dict):
    for key, val in values.items():
        if not hasattr(section, key):
            raise KeyError(f"unknown config key: {key}")
        setattr(section, key, val)


def load_config(path) -> SystemConfig:
    """Load a config YAML; missing sections/keys keep their defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    cfg = SystemConfig()
    for name, values in data.items():
        if not hasattr(cfg, name):
            raise KeyError(f"unknown config section: {name}")
        _apply(getattr(cfg, name), values or {})
    return cfg


def dump_config(cfg: SystemConfig, path) -> None:
    data = {
        name: dataclasses.asdict(getattr(cfg, name))
        for name in (
            "mapping", "semantic", "viewpoints", "prm",
            "sampler", "planner", "fsm", "harness",
        )
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
