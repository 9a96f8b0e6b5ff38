"""JSON run configuration: defaults, strict key checking and validation with field paths.

Layout::

    {"env": "air-hockey-2d", "seed": 0, "out_dir": "runs/a",
     "loop": {"max_iter": 10, "n_real": 10, "zeta": 0.0, "noise_std": 0.0},
     "training": {...TrainingConfig...},
     "randomization": {"threshold": 0.5, "fraction": 0.15, "m_samples": 64},
     "param_opt": {"step_size": 0.05, "max_steps": 200, "tolerance": 1e-5, "trust_region": 0.15}}

Every key is optional; missing ones take the defaults of the dataclasses.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .causal_model import TrainingConfig
from .errors import ConfigError
from .loop import LoopConfig, ParamOptConfig, RandomizationConfig

LOOP_KEYS = ("max_iter", "n_real", "zeta", "noise_std")
TOP_KEYS = ("env", "seed", "out_dir", "loop", "training", "randomization", "param_opt")
_SECTIONS = {"training": TrainingConfig, "randomization": RandomizationConfig, "param_opt": ParamOptConfig}


@dataclass
class RunConfig:
    loop: LoopConfig
    out_dir: str | None = None

    def to_dict(self) -> dict:
        d = {
            "env": self.loop.env_name,
            "seed": self.loop.seed,
            "loop": {k: getattr(self.loop, k) for k in LOOP_KEYS},
            "training": self.loop.training.to_dict(),
            "randomization": dataclasses.asdict(self.loop.randomization),
            "param_opt": dataclasses.asdict(self.loop.param_opt),
        }
        if self.out_dir is not None:
            d["out_dir"] = self.out_dir
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"expected an object, got {type(obj).__name__}", field=path or None)
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key (allowed: {', '.join(allowed)})", field=where)


def _check_type(value, default, path):
    """Reject values whose JSON type cannot stand in for the default's type."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"wrong type {type(value).__name__}", field=path)


def _build(cls, values: dict, path: str):
    _check_keys(values, [f.name for f in dataclasses.fields(cls)], path)
    default = cls()
    kwargs = {}
    for key, value in values.items():
        dflt = getattr(default, key)
        if dflt is None or value is None:
            if value is not None and not isinstance(value, (int, float)):
                raise ConfigError(f"wrong type {type(value).__name__}", field=f"{path}.{key}")
        else:
            _check_type(value, dflt, f"{path}.{key}")
        if isinstance(dflt, float) and isinstance(value, int):
            value = float(value)
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        field = f"{path}.{exc.field}" if exc.field else path
        msg = str(exc)[len(exc.field) + 2:] if exc.field else str(exc)
        raise ConfigError(msg, field=field) from None


def config_from_dict(doc: dict) -> RunConfig:
    _check_keys(doc, TOP_KEYS, "")
    sections = {name: _build(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()}
    loop_vals = doc.get("loop", {})
    _check_keys(loop_vals, LOOP_KEYS, "loop")
    defaults = LoopConfig()
    kwargs = {}
    for key in LOOP_KEYS:
        if key in loop_vals:
            _check_type(loop_vals[key], getattr(defaults, key), f"loop.{key}")
            kwargs[key] = loop_vals[key]
    env = doc.get("env", defaults.env_name)
    seed = doc.get("seed", defaults.seed)
    _check_type(env, "", "env")
    _check_type(seed, 0, "seed")
    out_dir = doc.get("out_dir")
    if out_dir is not None:
        _check_type(out_dir, "", "out_dir")
    try:
        loop = LoopConfig(env_name=env, seed=seed, **kwargs, **sections)
    except ConfigError as exc:
        if exc.field:
            raise ConfigError(str(exc)[len(exc.field) + 2:], field=f"loop.{exc.field}") from None
        raise ConfigError(str(exc), field="env") from None
    return RunConfig(loop, out_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {str(path)!r} at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc)
