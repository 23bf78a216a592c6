"""
Configuration and constants for the hybrid-system learner.

Process settings come from the environment (a `.env` file is loaded by
app.py). Experiment settings come from one YAML file per experiment and are
parsed into frozen dataclasses; every error is anchored to a file line.
"""

import hashlib
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import yaml

from core_types import ConfigError
from sims.ball import BallConfig
from sims.box import BoxConfig

# Dev mode - verbose progress logging from every module
DEV_MODE = os.getenv("PWSHS_DEV_MODE", "false").lower() == "true"

DEFAULT_OUTPUT_DIR = os.getenv("PWSHS_OUTPUT_DIR", "runs")

DEFAULT_JOBS = int(os.getenv("PWSHS_JOBS", "0")) or (os.cpu_count() or 1)

EXPERIMENTS = ("ball", "box")

RESAMPLE_POLICIES = ("ess", "always", "never")

METHODS = ("hybrid", "gp", "switching", "ekf")


@dataclass(frozen=True)
class GpConfig:
    beta0_init: float = 1.0
    beta1_init: float = 0.01
    beta0_bounds: Tuple[float, float] = (1e-4, 1e4)
    beta1_bounds: Tuple[float, float] = (1e-8, 1e2)
    n_restarts: int = 5
    warm_restarts: int = 1
    max_iter: int = 200
    max_points: int = 400
    seed: int = 0

    def __post_init__(self):
        for name in ("beta0_bounds", "beta1_bounds"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise ConfigError(f"gp.{name} must satisfy 0 < low <= high")
        if self.beta0_init <= 0 or self.beta1_init < 0:
            raise ConfigError("gp.beta0_init must be positive and gp.beta1_init non-negative")
        if self.n_restarts < 1 or self.warm_restarts < 1:
            raise ConfigError("gp.n_restarts and gp.warm_restarts must be at least 1")
        if self.max_points < 0:
            raise ConfigError("gp.max_points must be non-negative (0 disables the cap)")

    def log_bounds(self):
        return [tuple(np.log(self.beta0_bounds)), tuple(np.log(self.beta1_bounds))]


@dataclass(frozen=True)
class ClusterConfig:
    beta0: Optional[float] = None
    max_points: int = 3000
    n_init: int = 10

    def __post_init__(self):
        if self.beta0 is not None and self.beta0 <= 0:
            raise ConfigError("clustering.beta0 must be positive (omit it for the median heuristic)")
        if self.max_points < 2:
            raise ConfigError("clustering.max_points must be at least 2")


@dataclass(frozen=True)
class OversampleConfig:
    min_target: int = 50
    median_fraction: float = 0.2
    target: Optional[int] = None
    single_jitter: float = 1e-6

    def __post_init__(self):
        if self.min_target < 0 or self.median_fraction < 0:
            raise ConfigError("oversample.min_target and oversample.median_fraction must be non-negative")
        if self.target is not None and self.target < 0:
            raise ConfigError("oversample.target must be non-negative")


@dataclass(frozen=True)
class ClassifierConfig:
    reg: float = 1.0
    balanced: bool = True
    max_iter: int = 1000
    tol: float = 1e-6
    use_synthetic: bool = True

    def __post_init__(self):
        if self.reg <= 0:
            raise ConfigError("classifier.reg must be positive")


@dataclass(frozen=True)
class LearnerConfig:
    n_modes: int = 2
    max_iters: int = 20
    n_jobs: int = 1
    reassign_margin: float = 4.0
    smooth_fraction: float = 0.5

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigError("learner.n_modes must be at least 1")
        if self.max_iters < 1:
            raise ConfigError("learner.max_iters must be at least 1")
        if self.reassign_margin < 0:
            raise ConfigError("learner.reassign_margin must be non-negative")
        if not 0 < self.smooth_fraction <= 1:
            raise ConfigError("learner.smooth_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class TrackingConfig:
    n_particles: int = 500
    sigma_eps: float = 0.1
    resample: str = "ess"
    ess_threshold: float = 0.5
    stratified: bool = False
    metric_dims: Tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("tracking.n_particles must be at least 1")
        if self.sigma_eps <= 0:
            raise ConfigError("tracking.sigma_eps must be positive")
        if self.resample not in RESAMPLE_POLICIES:
            raise ConfigError(f"tracking.resample must be one of {RESAMPLE_POLICIES}")
        if not 0 < self.ess_threshold <= 1:
            raise ConfigError("tracking.ess_threshold must lie in (0, 1]")
        if len(self.metric_dims) == 0:
            raise ConfigError("tracking.metric_dims must name at least one coordinate")


@dataclass(frozen=True)
class EvalConfig:
    n_max: int = 2
    window: int = 2
    threshold: float = 0.1
    methods: Tuple[str, ...] = METHODS
    max_starts: int = 0

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError("evaluation.n_max must be at least 1")
        if self.window < 0:
            raise ConfigError("evaluation.window must be non-negative")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"evaluation.methods has unknown entries {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "ball"
    seed: int = 0
    simulation: Union[BallConfig, BoxConfig] = field(default_factory=BallConfig)
    clustering: ClusterConfig = field(default_factory=ClusterConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    oversample: OversampleConfig = field(default_factory=OversampleConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)


SECTION_TYPES = {
    "clustering": ClusterConfig,
    "gp": GpConfig,
    "oversample": OversampleConfig,
    "classifier": ClassifierConfig,
    "learner": LearnerConfig,
    "tracking": TrackingConfig,
    "evaluation": EvalConfig,
}


# --- YAML parsing with line anchors ---

def _key_lines(node, prefix="", lines=None):
    """Map dotted key paths to 1-based line numbers."""
    if lines is None:
        lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}{key_node.value}"
            lines[key] = key_node.start_mark.line + 1
            _key_lines(value_node, key + ".", lines)
    return lines


def _coerce(value, ftype, where):
    origin = typing.get_origin(ftype)
    args = typing.get_args(ftype)
    if origin is Union and type(None) in args:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, where)
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], where) for v in value)
        if len(value) != len(args):
            raise ConfigError(f"{where} must have {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    return value


def _build_section(cls, raw, name, path, lines):
    anchor = lines.get(name)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping", path, anchor)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        key_line = lines.get(f"{name}.{key}", anchor)
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'", path, key_line)
        try:
            kwargs[key] = _coerce(value, hints[key], f"{name}.{key}")
        except ConfigError as exc:
            raise ConfigError(str(exc), path, key_line) from None
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), path, anchor) from None


def parse_experiment_config(data: dict, path="<config>", lines=None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", path, 1)

    allowed = {"experiment", "seed", "simulation"} | set(SECTION_TYPES)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown section '{key}'", path, lines.get(key))

    experiment = data.get("experiment", "ball")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}",
                          path, lines.get("experiment"))
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}", path, lines.get("seed"))

    sim_cls = BallConfig if experiment == "ball" else BoxConfig
    sections = {
        name: _build_section(cls, data.get(name), name, path, lines)
        for name, cls in SECTION_TYPES.items()
    }
    simulation = _build_section(sim_cls, data.get("simulation"), "simulation", path, lines)

    dim = 2 if experiment == "ball" else 5
    bad_dims = [d for d in sections["tracking"].metric_dims if not 0 <= d < dim]
    if bad_dims:
        raise ConfigError(f"tracking.metric_dims {bad_dims} out of range for a {dim}-D state",
                          path, lines.get("tracking.metric_dims"))

    return ExperimentConfig(experiment=experiment, seed=seed, simulation=simulation, **sections)


def load_experiment_config(path) -> ExperimentConfig:
    """
    Read and validate a YAML experiment config.

    Raises:
        ConfigError: with a `path:line:` prefix for every problem found.
    """
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"invalid YAML: {exc.problem}", path, line) from None
    return parse_experiment_config(data or {}, path, _key_lines(root) if root is not None else {})


def config_hash(path) -> str:
    """SHA-256 of the config file contents, recorded in every run manifest."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
