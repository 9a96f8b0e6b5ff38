"""Named, bounded environment parameters for the toy environments."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError, DomainError

AIR_HOCKEY = "air-hockey-2d"
BOUNCING_BALL = "bouncing-ball-2d"
ENV_NAMES = (AIR_HOCKEY, BOUNCING_BALL)

# Table-1 geometry (metres), planar.
TABLE_HALF_EXTENTS = (0.45, 0.9)
PUCK_RADIUS = 0.0255
PUSHER_RADIUS = 0.03
GOAL_CENTER = (0.43, 0.0)
GOAL_RADIUS = 0.15
OBSTACLE_CENTER = (0.1, 0.0)
OBSTACLE_HALF_EXTENTS = (0.025, 0.18)
PUCK1_START = (-0.15, 0.0)
PUCK2_START = (-0.075, -0.075)

AIR_HOCKEY_ACTION_LOW = (-0.24, 0.065, -0.157, 0.3)
AIR_HOCKEY_ACTION_HIGH = (-0.21, 0.085, 0.157, 0.5)
BOUNCING_BALL_ACTION_LOW = (0.55,)
BOUNCING_BALL_ACTION_HIGH = (0.75,)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    min: float
    max: float
    default: float
    causal: bool = False

    def __post_init__(self):
        if self.name.count("@") != 2:
            raise ConfigError("expected object@param_type@param", field=self.name)
        if not self.min < self.max:
            raise ConfigError(f"min {self.min} must be < max {self.max}", field=self.name)
        if not self.min <= self.default <= self.max:
            raise ConfigError(f"default {self.default} outside [{self.min}, {self.max}]", field=self.name)

    @property
    def span(self) -> float:
        return self.max - self.min

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.min, "max": self.max,
                "default": self.default, "causal": self.causal}


@dataclass(frozen=True)
class ParamRegistry:
    env_name: str
    specs: tuple
    n_factors: int
    factor_names: tuple
    action_low: tuple
    action_high: tuple
    horizon: int
    dt: float
    substeps: int = 4
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate parameter names {dupes}")
        if self.n_factors < 1 or len(self.factor_names) != self.n_factors:
            raise ConfigError("K must be >= 1 and match factor_names")
        if self.horizon < 1 or self.dt <= 0:
            raise ConfigError("horizon must be >= 1 and dt > 0")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self):
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def lows(self) -> np.ndarray:
        return np.array([s.min for s in self.specs])

    @property
    def highs(self) -> np.ndarray:
        return np.array([s.max for s in self.specs])

    @property
    def causal_names(self) -> list[str]:
        return [s.name for s in self.specs if s.causal]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r} for {self.env_name}") from None

    def spec(self, name: str) -> ParamSpec:
        return self.specs[self.index(name)]

    def defaults(self) -> "EnvParamVector":
        return EnvParamVector(self, np.array([s.default for s in self.specs]))

    def to_dict(self) -> dict:
        return {
            "env_name": self.env_name,
            "n_factors": self.n_factors,
            "factor_names": list(self.factor_names),
            "action_low": list(self.action_low),
            "action_high": list(self.action_high),
            "horizon": self.horizon,
            "dt": self.dt,
            "substeps": self.substeps,
            "params": [s.to_dict() for s in self.specs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRegistry":
        specs = tuple(ParamSpec(p["name"], p["min"], p["max"], p["default"], p.get("causal", False))
                      for p in d["params"])
        return cls(d["env_name"], specs, d["n_factors"], tuple(d["factor_names"]),
                   tuple(d["action_low"]), tuple(d["action_high"]), d["horizon"], d["dt"],
                   d.get("substeps", 4))


class EnvParamVector:
    """Parameter values in raw units, aligned with the registry order."""

    __slots__ = ("registry", "values")

    def __init__(self, registry: ParamRegistry, values, check: bool = True):
        values = np.array(values, dtype=np.float64)
        if values.shape != (len(registry),):
            raise ContractError(f"expected {len(registry)} values, got shape {values.shape}")
        self.registry = registry
        self.values = values
        if check:
            self.check_bounds()

    def check_bounds(self):
        bad = np.flatnonzero((self.values < self.registry.lows) | (self.values > self.registry.highs)
                             | ~np.isfinite(self.values))
        if bad.size:
            i = int(bad[0])
            s = self.registry.specs[i]
            raise DomainError(f"parameter {s.name}={self.values[i]!r} outside [{s.min}, {s.max}]"
                              + (f" (+{bad.size - 1} more)" if bad.size > 1 else ""))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.registry.index(name)])

    def with_values(self, updates: dict) -> "EnvParamVector":
        vals = self.values.copy()
        for name, v in updates.items():
            vals[self.registry.index(name)] = v
        return EnvParamVector(self.registry, vals)

    def normalized(self) -> np.ndarray:
        r = self.registry
        return (self.values - r.lows) / (r.highs - r.lows)

    @classmethod
    def from_normalized(cls, registry: ParamRegistry, x) -> "EnvParamVector":
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
        vals = registry.lows + x * (registry.highs - registry.lows)
        # keep exact endpoints despite rounding in the affine map
        vals = np.clip(vals, registry.lows, registry.highs)
        return cls(registry, vals)

    def as_dict(self) -> dict:
        return dict(zip(self.registry.names, self.values.tolist()))

    def __eq__(self, other):
        return (isinstance(other, EnvParamVector) and other.registry.env_name == self.registry.env_name
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"EnvParamVector({self.registry.env_name}, n={len(self.values)})"


_DAMPING = (-12.0, -4.0, -10.0)
_FRICTION = (0.0, 0.1, 0.05)
_BIAS = (-0.05, 0.05, 0.0)


def _air_hockey_specs() -> tuple:
    causal = [
        ParamSpec("pusher@actuation@vel_discount", 0.5, 1.0, 0.75, True),
        ParamSpec("pusher@dyna@damping", *_DAMPING, True),
        ParamSpec("puck1@dyna@damping", *_DAMPING, True),
        ParamSpec("puck1@dyna@friction_sliding", *_FRICTION, True),
        ParamSpec("puck2@dyna@damping", *_DAMPING, True),
        ParamSpec("puck2@dyna@friction_sliding", *_FRICTION, True),
        ParamSpec("right_wall@dyna@damping", *_DAMPING, True),
        ParamSpec("env@camera@bias_x", *_BIAS, True),
        ParamSpec("env@camera@bias_y", *_BIAS, True),
        ParamSpec("puck@dyna@restitution", 0.6, 1.0, 0.9, True),
    ]
    inert = []
    for wall in ("left_wall", "front_wall", "back_wall", "obstacle"):
        inert.append(ParamSpec(f"{wall}@dyna@damping", *_DAMPING))
    for obj in ("pusher", "table", "left_wall", "right_wall", "front_wall", "back_wall", "obstacle"):
        inert.append(ParamSpec(f"{obj}@dyna@friction_sliding", *_FRICTION))
    for kind, obj in itertools.product(("friction_torsional", "friction_rolling"), ("pusher", "puck1", "puck2")):
        inert.append(ParamSpec(f"{obj}@dyna@{kind}", 0.0, 0.01, 0.005))
    for obj in ("table", "left_wall", "right_wall", "front_wall", "back_wall", "obstacle", "goal"):
        inert.append(ParamSpec(f"{obj}@inertial@mass", 0.5, 5.0, 1.0))
    for obj, ch in itertools.product(("pusher", "puck1", "puck2", "obstacle", "goal"), "rgb"):
        inert.append(ParamSpec(f"{obj}@geom@rgba_{ch}", 0.0, 1.0, 0.5))
    for obj in ("obstacle", "goal"):
        inert.append(ParamSpec(f"{obj}@geom@rgba_a", 0.0, 1.0, 1.0))
    for obj in ("pusher", "puck1", "puck2"):
        inert.append(ParamSpec(f"{obj}@contact@solref_timeconst", 0.01, 0.05, 0.02))
        inert.append(ParamSpec(f"{obj}@contact@solref_dampratio", 0.5, 1.5, 1.0))
    for obj in ("left_wall", "right_wall", "front_wall", "back_wall", "obstacle"):
        inert.append(ParamSpec(f"{obj}@contact@margin", 0.0, 0.01, 0.0))
    inert.append(ParamSpec("env@camera@fovy", 30.0, 60.0, 45.0))
    inert.append(ParamSpec("env@light@diffuse", 0.0, 1.0, 0.6))
    specs = tuple(causal + inert)
    assert len(specs) == 64, len(specs)
    return specs


def _bouncing_ball_specs() -> tuple:
    causal = [
        ParamSpec("ball@dyna@damping", -0.2, -0.02, -0.1, True),
        ParamSpec("ball@dyna@mass", 0.05, 0.2, 0.1, True),
        ParamSpec("plate1@dyna@damping", *_DAMPING, True),
        ParamSpec("plate2@dyna@damping", *_DAMPING, True),
    ]
    taken = {s.name for s in causal}
    kinds = [
        ("dyna", "friction_sliding", *_FRICTION),
        ("dyna", "friction_torsional", 0.0, 0.01, 0.005),
        ("dyna", "friction_rolling", 0.0, 0.01, 0.005),
        ("contact", "solref_timeconst", 0.01, 0.05, 0.02),
        ("contact", "solref_dampratio", 0.5, 1.5, 1.0),
        ("contact", "margin", 0.0, 0.01, 0.0),
        ("geom", "rgba_r", 0.0, 1.0, 0.5),
        ("geom", "rgba_g", 0.0, 1.0, 0.5),
        ("geom", "rgba_b", 0.0, 1.0, 0.5),
        ("geom", "rgba_a", 0.0, 1.0, 1.0),
        ("inertial", "mass", 0.5, 5.0, 1.0),
        ("dyna", "damping", *_DAMPING),
    ]
    objects = ("ball", "plate1", "plate2", "basket", "stand1", "stand2", "release_arm", "floor")
    inert = []
    for (ptype, pname, lo, hi, d), obj in itertools.product(kinds, objects):
        name = f"{obj}@{ptype}@{pname}"
        if name in taken or name == "ball@inertial@mass":
            continue
        inert.append(ParamSpec(name, lo, hi, d))
    inert.append(ParamSpec("env@camera@bias_z", -0.05, 0.05, 0.0))
    specs = tuple(causal + inert[:78])
    assert len(specs) == 82, len(specs)
    return specs


def default_registry(env_name: str) -> ParamRegistry:
    if env_name == AIR_HOCKEY:
        return ParamRegistry(AIR_HOCKEY, _air_hockey_specs(), 2, ("puck1", "puck2"),
                             AIR_HOCKEY_ACTION_LOW, AIR_HOCKEY_ACTION_HIGH, horizon=50, dt=0.05)
    if env_name == BOUNCING_BALL:
        return ParamRegistry(BOUNCING_BALL, _bouncing_ball_specs(), 1, ("ball",),
                             BOUNCING_BALL_ACTION_LOW, BOUNCING_BALL_ACTION_HIGH, horizon=50, dt=0.02)
    raise ConfigError(f"unknown environment {env_name!r}; expected one of {ENV_NAMES}")


_TARGETS = {
    AIR_HOCKEY: {
        "pusher@actuation@vel_discount": 0.85,
        "pusher@dyna@damping": -6.0,
        "puck1@dyna@damping": -6.0,
        "puck1@dyna@friction_sliding": 0.04,
        "puck2@dyna@damping": -6.0,
        "puck2@dyna@friction_sliding": 0.03,
        "right_wall@dyna@damping": -6.0,
        "env@camera@bias_x": 0.03,
        "env@camera@bias_y": -0.02,
    },
    BOUNCING_BALL: {
        "ball@dyna@damping": -0.06,
        "ball@dyna@mass": 0.08,
        "plate1@dyna@damping": -6.0,
        "plate2@dyna@damping": -6.0,
    },
}


def target_params(env_name: str, registry: ParamRegistry | None = None) -> EnvParamVector:
    """Hidden "real" parameters for the sim-to-sim protocol."""
    registry = registry or default_registry(env_name)
    if env_name not in _TARGETS:
        raise ConfigError(f"unknown environment {env_name!r}")
    return registry.defaults().with_values(_TARGETS[env_name])
