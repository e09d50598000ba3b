"""Scenario configuration: JSON files validated against a schema, loaded into dataclasses."""

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .planning import PlannerConfig
from .spectral import SpectralConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CommConfig:
    r_comm: float = 18.0
    sigma: float = None  # None -> r^4 / ln(11)


@dataclass(frozen=True)
class RobotConfig:
    initial_positions: tuple = None  # None -> ring around the origin
    initial_spread: float = 1.5


@dataclass(frozen=True)
class TargetConfig:
    center: tuple = (0.0, 0.0)
    radii: tuple = None  # None -> 4, 6, 8, ...
    phases: tuple = None  # None -> evenly spaced
    angular_rate: float = 0.5  # rad/s (0.05 rad per 0.1 s step)
    process_noise: float = 0.04
    initial_belief_var: float = 1.0


@dataclass(frozen=True)
class SensorConfig:
    h: tuple = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
    gain: tuple = (1.0, 1.0, 1.0)
    decay: tuple = (0.2, 0.2, 0.2)


@dataclass(frozen=True)
class RiskConfig:
    peak: float = 5.0
    spread: float = 1.0  # isotropic shape matrix s * I
    use_inverse: bool = False


@dataclass(frozen=True)
class FailureConfig:
    gain: float = 0.5
    random: bool = True
    scripted: tuple = ()  # (step, robot, sensor kind)


@dataclass(frozen=True)
class ControlConfig:
    d_min: float = 1.0
    epsilon: float = 0.25
    qp_max_rounds: int = 3


@dataclass(frozen=True)
class EstimationConfig:
    consensus_tol: float = 1e-8
    max_rounds_factor: int = 50
    fusion: str = "centralized"  # or "agreement"


@dataclass(frozen=True)
class SweepConfig:
    eta: tuple = ()
    tail_steps: int = 10
    seeds: tuple = (0,)
    steps: int = None  # run length per sweep point; None -> the scenario's steps


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    n_robots: int = 3
    n_targets: int = 3
    steps: int = 50
    dt: float = 0.1
    seed: int = 0
    mode: str = "decentralized"
    risk_aware: bool = True
    comm: CommConfig = field(default_factory=CommConfig)
    robots: RobotConfig = field(default_factory=RobotConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    failures: FailureConfig = field(default_factory=FailureConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def replace(self, **changes):
        """Copy with top-level or dotted (``"planner.q1"``) overrides."""
        d = to_dict(self)
        for key, val in changes.items():
            node = d
            *path, last = key.split(".")
            for p in path:
                node = node[p]
            node[last] = val
        return from_dict(d)


_SECTIONS = {
    "comm": CommConfig, "robots": RobotConfig, "targets": TargetConfig,
    "sensors": SensorConfig, "risk": RiskConfig, "failures": FailureConfig,
    "planner": PlannerConfig, "control": ControlConfig, "spectral": SpectralConfig,
    "estimation": EstimationConfig, "sweep": SweepConfig,
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_BOOL = {"type": "boolean"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_NULLABLE_POS = {"type": ["number", "null"], "exclusiveMinimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "n_robots": _INT_POS,
    "n_targets": _INT_POS,
    "steps": {"type": "integer", "minimum": 0},
    "dt": _POS,
    "seed": {"type": "integer", "minimum": 0},
    "mode": {"enum": ["decentralized", "centralized"]},
    "risk_aware": _BOOL,
    "comm": _obj({"r_comm": _POS, "sigma": _NULLABLE_POS}),
    "robots": _obj({"initial_positions": {"type": ["array", "null"], "items": _POINT},
                    "initial_spread": _POS}),
    "targets": _obj({"center": _POINT,
                     "radii": {"type": ["array", "null"], "items": _POS},
                     "phases": {"type": ["array", "null"], "items": _NUM},
                     "angular_rate": _NUM, "process_noise": _NONNEG,
                     "initial_belief_var": _POS}),
    "sensors": _obj({"h": {"type": "array", "items": _POINT, "minItems": 1},
                     "gain": {"type": "array", "items": _POS, "minItems": 1},
                     "decay": {"type": "array", "items": _NONNEG, "minItems": 1}}),
    "risk": _obj({"peak": {"oneOf": [_POS, {"type": "array", "items": _POS}]},
                  "spread": {"oneOf": [_POS, {"type": "array", "items": _POS}]},
                  "use_inverse": _BOOL}),
    "failures": _obj({"gain": _NONNEG, "random": _BOOL,
                      "scripted": {"type": "array", "items": {
                          "type": "array", "items": {"type": "integer", "minimum": 0},
                          "minItems": 3, "maxItems": 3}}}),
    "planner": _obj({"q1": _POS, "q2": _POS,
                     "rho1": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
                     "rho2": _POS, "d_max": _POS,
                     "max_iter": _INT_POS, "fd_step": _POS, "min_step": _POS, "trace_cap": _POS,
                     "br_max_rounds": _INT_POS, "br_tol": _POS,
                     "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                     "eta_override": {"type": ["number", "null"], "minimum": 0}}),
    "control": _obj({"d_min": _NONNEG, "epsilon": _NONNEG, "qp_max_rounds": _INT_POS}),
    "spectral": _obj({"k1": _POS, "k3": _POS,
                      "s_min": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                      "beta_scale": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                      "max_rounds": _INT_POS, "tol": _POS, "nu_floor": _POS}),
    "estimation": _obj({"consensus_tol": _POS, "max_rounds_factor": _INT_POS,
                        "fusion": {"enum": ["centralized", "agreement"]}}),
    "sweep": _obj({"eta": {"type": "array", "items": _NONNEG},
                   "tail_steps": _INT_POS,
                   "steps": {"type": ["integer", "null"], "minimum": 1},
                   "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}}}),
})


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def from_dict(d):
    """Validate ``d`` and build a :class:`ScenarioConfig`; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{loc}: {exc.message}") from None
    d = copy.deepcopy(d)
    d.pop("description", None)
    kw = {}
    for key, val in d.items():
        if key in _SECTIONS:
            sec = {k: _tuplify(v) for k, v in val.items()}
            if key == "planner" and "rho1" in sec and not isinstance(sec["rho1"], tuple):
                sec["rho1"] = (sec["rho1"],)
            try:
                kw[key] = _SECTIONS[key](**sec)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            kw[key] = val
    cfg = ScenarioConfig(**kw)
    _check(cfg)
    return cfg


def _check(cfg):
    n, m = cfg.n_robots, cfg.n_targets
    u = len(cfg.sensors.h)
    if len(cfg.sensors.gain) != u or len(cfg.sensors.decay) != u:
        raise ConfigError("sensors: h, gain and decay must have the same length")
    if cfg.robots.initial_positions is not None and len(cfg.robots.initial_positions) != n:
        raise ConfigError("robots.initial_positions must list n_robots points")
    for name in ("radii", "phases"):
        v = getattr(cfg.targets, name)
        if v is not None and len(v) != m:
            raise ConfigError(f"targets.{name} must have n_targets entries")
    rho1 = np.asarray(cfg.planner.rho1).ravel()
    if rho1.size not in (1, m):
        raise ConfigError("planner.rho1 must be a scalar or have n_targets entries")
    for s, i, k in cfg.failures.scripted:
        if i >= n or k >= u:
            raise ConfigError(f"failures.scripted entry {(s, i, k)} out of range")
    for name in ("peak", "spread"):
        v = getattr(cfg.risk, name)
        if isinstance(v, tuple) and len(v) != m:
            raise ConfigError(f"risk.{name} must be a scalar or have n_targets entries")


def to_dict(cfg):
    d = asdict(cfg)
    d["planner"].pop("risk_aware", None)  # driven by the top-level flag

    def lists(v):
        if isinstance(v, (tuple, list)):
            return [lists(x) for x in v]
        if isinstance(v, dict):
            return {k: lists(x) for k, x in v.items()}
        return v
    return lists(d)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return from_dict(d)


def bundled_scenarios():
    root = resources.files("dectrack") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled(name):
    root = resources.files("dectrack") / "scenarios"
    with (root / f"{name}.json").open(encoding="utf-8") as fh:
        return from_dict(json.load(fh))
