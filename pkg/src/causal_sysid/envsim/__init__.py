from .registry import (AIR_HOCKEY, BOUNCING_BALL, ENV_NAMES, EnvParamVector, ParamRegistry,
                       ParamSpec, default_registry, target_params)
from .physics import SimState, integrate_step, resolve_collisions, wall_restitution
from .rollout import (NOMINAL, REAL, FactorizedTrajectory, rollout, scripted_policy_sample,
                      trajectory_difference)

__all__ = [
    "AIR_HOCKEY", "BOUNCING_BALL", "ENV_NAMES", "EnvParamVector", "ParamRegistry", "ParamSpec",
    "default_registry", "target_params", "SimState", "integrate_step", "resolve_collisions",
    "wall_restitution", "NOMINAL", "REAL", "FactorizedTrajectory", "rollout",
    "scripted_policy_sample", "trajectory_difference",
]
