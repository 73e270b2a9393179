"""Configuration schema for the flexible coupler array simulator.

The on-disk format is YAML with a single top-level mapping.  Every block maps
onto one of the dataclasses below.  Unknown keys anywhere are rejected, and
``schema_version`` is required and must equal :data:`SCHEMA_VERSION`.  All
quantities are SI: meters, hertz, watts, radians.
"""

from dataclasses import dataclass, field, fields, is_dataclass
import copy
import math

import yaml

SCHEMA_VERSION = 1

SPEED_OF_LIGHT = 299_792_458.0

SCHEMES = (
    "flexible",
    "fixed_antenna",
    "translatable_fixed_pattern",
    "rotatable_fixed_pattern",
    "nested_baseline",
)

SWEEP_VARIABLES = ("region_x", "region_y", "rho", "user_angle", "coverage_angle")


class ConfigError(ValueError):
    """Raised when a configuration file or object is invalid."""


@dataclass
class GeometryConfig:
    rail_length: float = 10.0
    rail_height: float = 0.5
    region_x: float = 5.0
    region_y: float = 8.0
    # distance from the rail line to the center of the user rectangle; the
    # rectangle extends region_y/2 to either side, so it must stay clear of
    # the rail (region_standoff > region_y/2)
    region_standoff: float = 6.0
    carrier_frequency: float = 28.0e9

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass
class PopulationConfig:
    num_antennas: int = 4
    num_users: int = 3
    clusters_per_user: int = 2
    paths_per_cluster: int = 2


@dataclass
class StatisticsConfig:
    # nominal anchor-to-core distance range [lo, hi] and per-axis positional
    # spreads of the per-path scatter points on each side of a cluster
    distance_range: tuple = (2.0, 4.0)
    antenna_spread: float = 0.4
    user_spread: float = 0.4


@dataclass
class DictionaryConfig:
    num_patterns: int = 6
    num_angle_bins: int = 36
    beamwidth: float = 2.0 * math.pi / 6.0


@dataclass
class SamplingConfig:
    num_samples: int = 32       # fast-timescale draws per batch
    num_pretrain: int = 2000    # labeled rows for pretraining
    num_finetune: int = 200     # labeled rows for post-drift fine-tuning


@dataclass
class TrainingConfig:
    learning_rate: float = 0.01
    pretrain_iters: int = 1000
    finetune_iters: int = 100
    batch_size: int = 32
    adam_epsilon: float = 1.0e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    freeze_depth: int = 2
    hidden_layers: tuple = (64, 32, 16, 8)


@dataclass
class OptimizerConfig:
    step_size: float = 0.05
    tolerance: float = 1.0e-3
    fd_step: float = 1.0e-3
    max_iters: int = 200
    min_spacing: float = 0.5
    backtracking: bool = True


@dataclass
class SolverConfig:
    max_iters: int = 500
    tol: float = 1.0e-4
    line_search: bool = True
    away_steps: bool = True
    # reduced budget used when generating surrogate training labels
    label_max_iters: int = 60
    label_tol: float = 1.0e-3


@dataclass
class PowerConfig:
    rho: float = 1.0
    sigma2: float = 1.0


@dataclass
class BaselineConfig:
    outer_iters: int = 10        # slow-timescale position updates
    samples_per_update: int = 2  # fresh sample batches (and solves) per update


@dataclass
class PlacementConfig:
    """How users are placed: a rectangle, a single bearing, or a sector."""

    mode: str = "region"       # region | angle | sector
    radius: float = 6.0        # bearing distance for angle/sector modes
    angle: float = math.pi / 2
    sector_center: float = math.pi / 2
    sector_width: float = math.pi / 3


@dataclass
class SweepConfig:
    variable: str = "rho"
    grid: tuple = (0.1, 1.0, 10.0)
    schemes: tuple = ("flexible", "fixed_antenna")
    num_seeds: int = 20


@dataclass
class DriftConfig:
    distance_range: tuple = (3.0, 5.0)


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    statistics: StatisticsConfig = field(default_factory=StatisticsConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    sweep: SweepConfig = None
    drift: DriftConfig = None
    scheme: str = "flexible"
    seed: int = 0


_BLOCK_TYPES = {
    "geometry": GeometryConfig,
    "population": PopulationConfig,
    "statistics": StatisticsConfig,
    "dictionary": DictionaryConfig,
    "sampling": SamplingConfig,
    "training": TrainingConfig,
    "optimizer": OptimizerConfig,
    "solver": SolverConfig,
    "power": PowerConfig,
    "baseline": BaselineConfig,
    "placement": PlacementConfig,
    "sweep": SweepConfig,
    "drift": DriftConfig,
}


def _coerce(cls, data, path):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        target = _BLOCK_TYPES.get(name) if cls is ScenarioConfig else None
        if target is not None and value is not None:
            kwargs[name] = _coerce(target, value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path):
    """Load and validate a YAML config file.  Returns a ScenarioConfig."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "schema_version" not in data:
        raise ConfigError(f"{path}: missing required key schema_version")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version {data['schema_version']!r} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    cfg = _coerce(ScenarioConfig, data, path)
    validate_config(cfg)
    return cfg


def save_config(cfg, path):
    """Write a ScenarioConfig back to YAML (round-trips with load_config)."""

    def as_plain(obj):
        if is_dataclass(obj):
            return {f.name: as_plain(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [as_plain(v) for v in obj]
        return obj

    with open(path, "w") as fh:
        yaml.safe_dump(as_plain(cfg), fh, sort_keys=False)


def validate_config(cfg):
    """Check cross-field invariants.  Raises ConfigError on the first failure."""
    geo, pop, stat = cfg.geometry, cfg.population, cfg.statistics
    opt, dic, samp = cfg.optimizer, cfg.dictionary, cfg.sampling

    def require(cond, msg):
        if not cond:
            raise ConfigError(msg)

    require(geo.rail_length > 0, "geometry.rail_length must be positive")
    require(geo.rail_height > 0, "geometry.rail_height must be positive")
    require(geo.region_x > 0 and geo.region_y > 0, "region sides must be positive")
    if cfg.placement.mode == "region":
        require(
            geo.region_standoff > 0.5 * geo.region_y,
            "geometry.region_standoff must exceed region_y / 2 so the user "
            "rectangle stays on one side of the rail",
        )
    require(geo.carrier_frequency > 0, "geometry.carrier_frequency must be positive")
    require(pop.num_antennas >= 1, "population.num_antennas must be >= 1")
    require(pop.num_users >= 1, "population.num_users must be >= 1")
    require(pop.clusters_per_user >= 1, "population.clusters_per_user must be >= 1")
    require(pop.paths_per_cluster >= 1, "population.paths_per_cluster must be >= 1")
    require(opt.min_spacing > 0, "optimizer.min_spacing must be positive")
    require(
        geo.rail_length >= (pop.num_antennas - 1) * opt.min_spacing,
        "rail too short: rail_length must be >= (num_antennas - 1) * min_spacing",
    )
    lo, hi = stat.distance_range
    require(0 < lo <= hi, "statistics.distance_range must satisfy 0 < lo <= hi")
    require(
        hi > geo.rail_height,
        "statistics.distance_range upper bound must exceed rail_height so "
        "user-anchored cores at rail height are reachable",
    )
    require(stat.antenna_spread >= 0, "statistics.antenna_spread must be >= 0")
    require(stat.user_spread >= 0, "statistics.user_spread must be >= 0")
    require(dic.num_patterns >= 1, "dictionary.num_patterns must be >= 1")
    require(
        dic.num_angle_bins >= dic.num_patterns,
        "dictionary.num_angle_bins must be >= num_patterns",
    )
    require(dic.beamwidth > 0, "dictionary.beamwidth must be positive")
    require(samp.num_samples >= 1, "sampling.num_samples must be >= 1")
    require(cfg.power.rho > 0, "power.rho must be positive")
    require(cfg.power.sigma2 > 0, "power.sigma2 must be positive")
    require(cfg.training.freeze_depth >= 0, "training.freeze_depth must be >= 0")
    require(
        cfg.training.freeze_depth <= len(cfg.training.hidden_layers),
        "training.freeze_depth cannot exceed the number of hidden layers",
    )
    require(cfg.scheme in SCHEMES, f"unknown scheme {cfg.scheme!r}")
    require(cfg.placement.mode in ("region", "angle", "sector"),
            f"unknown placement mode {cfg.placement.mode!r}")
    if cfg.sweep is not None:
        require(
            cfg.sweep.variable in SWEEP_VARIABLES,
            f"unknown sweep variable {cfg.sweep.variable!r}",
        )
        require(len(cfg.sweep.grid) >= 1, "sweep.grid must be non-empty")
        require(cfg.sweep.num_seeds >= 1, "sweep.num_seeds must be >= 1")
        for s in cfg.sweep.schemes:
            require(s in SCHEMES, f"unknown scheme {s!r} in sweep.schemes")
    if cfg.drift is not None:
        dlo, dhi = cfg.drift.distance_range
        require(0 < dlo <= dhi, "drift.distance_range must satisfy 0 < lo <= hi")
        require(dhi > geo.rail_height,
                "drift.distance_range upper bound must exceed rail_height")
    return cfg


def desk_config():
    """Small configuration that runs the full pipeline in minutes."""
    return validate_config(ScenarioConfig())


def paper_config():
    """Full-size configuration.  Label generation alone takes hours."""
    cfg = ScenarioConfig(
        geometry=GeometryConfig(
            rail_length=8.0, rail_height=0.5, region_x=8.0, region_y=15.0,
            region_standoff=8.5, carrier_frequency=28.0e9,
        ),
        population=PopulationConfig(
            num_antennas=16, num_users=10, clusters_per_user=3, paths_per_cluster=3,
        ),
        statistics=StatisticsConfig(
            distance_range=(2.0, 4.0), antenna_spread=0.4, user_spread=0.4,
        ),
        dictionary=DictionaryConfig(
            num_patterns=14, num_angle_bins=360, beamwidth=2.0 * math.pi / 14.0,
        ),
        sampling=SamplingConfig(num_samples=32, num_pretrain=100_000, num_finetune=1000),
        training=TrainingConfig(hidden_layers=(500, 250, 100, 50)),
        optimizer=OptimizerConfig(min_spacing=0.25),
    )
    return validate_config(cfg)


def preset(scale):
    if scale == "desk":
        return desk_config()
    if scale == "paper":
        return paper_config()
    raise ConfigError(f"unknown scale {scale!r} (expected 'desk' or 'paper')")


def with_sweep_value(cfg, variable, value):
    """Return a deep copy of ``cfg`` with one swept variable replaced."""
    out = copy.deepcopy(cfg)
    if variable == "region_x":
        out.geometry.region_x = float(value)
    elif variable == "region_y":
        out.geometry.region_y = float(value)
    elif variable == "rho":
        out.power.rho = float(value)
    elif variable == "user_angle":
        out.placement.mode = "angle"
        out.placement.angle = float(value)
    elif variable == "coverage_angle":
        out.placement.mode = "sector"
        out.placement.sector_width = float(value)
    else:
        raise ConfigError(f"unknown sweep variable {variable!r}")
    return out
