"""Rollouts, the scripted stochastic policy and the factorized trajectory difference."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DomainError
from . import physics as ph
from . import registry as reg
from .registry import AIR_HOCKEY, BOUNCING_BALL, EnvParamVector, ParamRegistry

NOMINAL = "nominal"
REAL = "real"


@dataclass
class FactorizedTrajectory:
    """Observed positions per factor, shape (K, T+1, 2)."""

    positions: np.ndarray
    factor_names: tuple
    action: tuple
    seed: int = 0

    @property
    def n_factors(self) -> int:
        return self.positions.shape[0]

    @property
    def horizon(self) -> int:
        return self.positions.shape[1] - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"]
        for name in self.factor_names:
            header += [f"x_{name}", f"y_{name}"]
        w.writerow(header)
        for t in range(self.positions.shape[1]):
            row = [str(t)]
            for k in range(self.n_factors):
                row += [repr(float(v)) for v in self.positions[k, t]]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, action=(), seed=0) -> "FactorizedTrajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = tuple(h[2:] for h in header[1::2])
        data = np.array([[float(x) for x in r[1:]] for r in body])
        pos = data.reshape(len(body), len(names), 2).transpose(1, 0, 2)
        return cls(np.ascontiguousarray(pos), names, tuple(action), seed)


def check_action(registry: ParamRegistry, action) -> tuple:
    action = tuple(float(a) for a in action)
    if len(action) != registry.action_dim:
        raise DomainError(f"action has {len(action)} entries, expected {registry.action_dim}")
    for i, (a, lo, hi) in enumerate(zip(action, registry.action_low, registry.action_high)):
        if not lo <= a <= hi:
            raise DomainError(f"action[{i}]={a!r} outside [{lo}, {hi}]")
    return action


def scripted_policy_sample(registry: ParamRegistry, seed: int) -> tuple:
    """Uniform draw inside the environment's action box."""
    rng = np.random.default_rng(seed)
    low, high = np.array(registry.action_low), np.array(registry.action_high)
    return tuple(float(x) for x in rng.uniform(low, high))


def _air_hockey_state(eps: EnvParamVector, action):
    x0, y0, angle, speed = action
    tx, ty = reg.PUCK1_START
    heading = math.atan2(ty - y0, tx - x0) + angle
    v = speed * eps["pusher@actuation@vel_discount"] * ph.STRIKE_GAIN
    return ph.SimState(
        names=("pusher", "puck1", "puck2"),
        pos=[[x0, y0], list(reg.PUCK1_START), list(reg.PUCK2_START)],
        vel=[[v * math.cos(heading), v * math.sin(heading)], [0.0, 0.0], [0.0, 0.0]],
        radius=(reg.PUSHER_RADIUS, reg.PUCK_RADIUS, reg.PUCK_RADIUS),
        mass=(ph.PUSHER_MASS_RATIO, 1.0, 1.0),
    )


def _bouncing_ball_state(eps: EnvParamVector, action):
    return ph.SimState(names=("ball",), pos=[[ph.BALL_START_X, action[0]]], vel=[[0.0, 0.0]],
                       radius=(ph.BALL_RADIUS,), mass=(eps["ball@dyna@mass"],))


def simulate(registry: ParamRegistry, eps: EnvParamVector, action):
    """Run the dynamics; returns true factor positions (K, T+1, 2) and the contact log."""
    env = registry.env_name
    if env == AIR_HOCKEY:
        state = _air_hockey_state(eps, action)
        factors = (1, 2)
    elif env == BOUNCING_BALL:
        state = _bouncing_ball_state(eps, action)
        factors = (0,)
    else:
        raise DomainError(f"no dynamics for {env!r}")
    phys = ph.physics_from_params(eps, state.names)

    def retract_pusher(st, kind, i, event):
        if kind == "pair" and st.names[i] == "pusher" and st.active[i]:
            st.active[i] = False
            st.vel[i][0] = st.vel[i][1] = 0.0

    on_contact = retract_pusher if env == AIR_HOCKEY else None
    n_sub = registry.substeps
    dt_sub = registry.dt / n_sub
    out = np.empty((len(factors), registry.horizon + 1, 2))
    for k, b in enumerate(factors):
        out[k, 0] = state.pos[b]
    for t in range(1, registry.horizon + 1):
        for _ in range(n_sub):
            ph._update_velocities(state, phys, dt_sub)
            ph.sweep(state, phys, dt_sub, on_contact)
            if env == AIR_HOCKEY and state.active[0] and state.time >= ph.PUSHER_RETRACT_TIME:
                state.active[0] = False
        for k, b in enumerate(factors):
            out[k, t] = state.pos[b]
    return out, phys.contacts


def rollout(registry: ParamRegistry, eps: EnvParamVector, action, seed: int = 0,
            realism: str = NOMINAL, noise_std: float = 0.0) -> FactorizedTrajectory:
    if eps.registry.env_name != registry.env_name:
        raise ContractError("parameter vector belongs to a different environment")
    eps.check_bounds()
    action = check_action(registry, action)
    if realism not in (NOMINAL, REAL):
        raise ContractError(f"realism must be {NOMINAL!r} or {REAL!r}")
    pos, _ = simulate(registry, eps, action)
    if registry.env_name == AIR_HOCKEY:
        pos += np.array([eps["env@camera@bias_x"], eps["env@camera@bias_y"]])
    if realism == REAL and noise_std > 0.0:
        pos += np.random.default_rng(seed).normal(0.0, noise_std, size=pos.shape)
    return FactorizedTrajectory(pos, tuple(registry.factor_names), action, seed)


def trajectory_difference(sim: FactorizedTrajectory, real: FactorizedTrajectory) -> np.ndarray:
    """Per-factor sum over time of Euclidean distances between paired states."""
    a, b = np.asarray(sim.positions), np.asarray(real.positions)
    if a.shape != b.shape:
        raise ContractError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return np.sqrt(((a - b) ** 2).sum(axis=-1)).sum(axis=1)
