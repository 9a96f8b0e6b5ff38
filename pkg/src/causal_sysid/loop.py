"""Outer identification loop: causality-guided randomization, dataset assembly,
model training, gradient-based parameter updates, baselines and metrics.

Seeds: every random draw in iteration ``i`` comes from
``SeedSequence([master_seed, i, stream, n])`` where ``stream`` is one of the
``STREAM_*`` constants below and ``n`` indexes the real rollout (0 when unused).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import CompGraph, backward
from .causal_model import (CausalGraphParams, CausalModel, DifferenceDataset, TrainingConfig,
                           expected_graph, init_graph_params, predict_difference, psi_to_csv, train)
from .envsim import (NOMINAL, REAL, EnvParamVector, FactorizedTrajectory, ParamRegistry,
                     default_registry, rollout, scripted_policy_sample, trajectory_difference)
from .errors import ConfigError, ContractError, NumericError, SysIdError
from .files import atomic_write, csv_text

STREAM_ACTIONS = 0
STREAM_REAL_NOISE = 1
STREAM_DR = 2
STREAM_TRAIN = 3

CONVERGED = "converged"
MAX_ITERS = "max-iters"


def derive_seed(master: int, iteration: int, stream: int, n: int = 0) -> int:
    return int(np.random.SeedSequence([master, iteration, stream, n]).generate_state(1)[0])


@dataclass
class RandomizationConfig:
    threshold: float = 0.5
    fraction: float = 0.15
    m_samples: int = 64

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError(f"must be in (0, 1), got {self.threshold!r}", field="threshold")
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"must be in (0, 1], got {self.fraction!r}", field="fraction")
        if not isinstance(self.m_samples, int) or self.m_samples < 1:
            raise ConfigError(f"must be a positive int, got {self.m_samples!r}", field="m_samples")


@dataclass
class ParamOptConfig:
    step_size: float = 0.05
    max_steps: int = 200
    tolerance: float = 1e-5
    # half-width of the allowed move per call in normalized units; None lets the
    # optimizer roam the whole box
    trust_region: float | None = 0.15

    def __post_init__(self):
        if self.trust_region is not None and not 0 < self.trust_region <= 1:
            raise ConfigError(f"must be in (0, 1] or null, got {self.trust_region!r}", field="trust_region")
        if not self.step_size > 0:
            raise ConfigError(f"must be > 0, got {self.step_size!r}", field="step_size")
        if not isinstance(self.max_steps, int) or self.max_steps < 1:
            raise ConfigError(f"must be an int >= 1, got {self.max_steps!r}", field="max_steps")
        if not self.tolerance > 0:
            raise ConfigError(f"must be > 0, got {self.tolerance!r}", field="tolerance")


@dataclass
class LoopConfig:
    env_name: str = "air-hockey-2d"
    max_iter: int = 10
    n_real: int = 10
    zeta: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    param_opt: ParamOptConfig = field(default_factory=ParamOptConfig)

    def __post_init__(self):
        default_registry(self.env_name)  # raises ConfigError for unknown names
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            raise ConfigError(f"must be an int >= 1, got {self.max_iter!r}", field="max_iter")
        if not isinstance(self.n_real, int) or self.n_real < 1:
            raise ConfigError(f"must be an int >= 1, got {self.n_real!r}", field="n_real")
        if not self.zeta >= 0:
            raise ConfigError(f"must be >= 0, got {self.zeta!r}", field="zeta")
        if not self.noise_std >= 0:
            raise ConfigError(f"must be >= 0, got {self.noise_std!r}", field="noise_std")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["training"] = self.training.to_dict()
        return d


@dataclass
class IterationRecord:
    index: int
    eps: EnvParamVector
    psi: np.ndarray
    diff_mean: np.ndarray     # per factor, over the N real rollouts
    diff_min: np.ndarray
    diff_max: np.ndarray
    active: list
    mape: float | None = None
    sparse_weight: float | None = None
    final_loss: float | None = None
    dataset: DifferenceDataset | None = None

    @property
    def mean_difference(self) -> float:
        return float(np.mean(self.diff_mean))


@dataclass
class RunReport:
    registry: ParamRegistry
    config: LoopConfig
    mode: str
    iterations: list = field(default_factory=list)
    status: str = MAX_ITERS

    @property
    def final(self) -> IterationRecord:
        return self.iterations[-1]

    def summary(self) -> dict:
        return {
            "env": self.registry.env_name,
            "mode": self.mode,
            "status": self.status,
            "config": self.config.to_dict(),
            "iterations": [{
                "index": r.index,
                "mean_difference": r.mean_difference,
                "diff_mean": r.diff_mean.tolist(),
                "diff_min": r.diff_min.tolist(),
                "diff_max": r.diff_max.tolist(),
                "mape": r.mape,
                "sparse_weight": r.sparse_weight,
                "final_loss": r.final_loss,
                "n_active": len(r.active),
                "active": list(r.active),
                "eps": r.eps.as_dict(),
            } for r in self.iterations],
        }

    def write(self, out_dir):
        out = Path(out_dir)
        names = self.registry.names
        factors = list(self.registry.factor_names)
        atomic_write(out / "report.json", json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        atomic_write(out / "epsilon_history.csv",
                     csv_text(["iteration"] + names, [[r.index] + r.eps.values.tolist() for r in self.iterations]))
        rows = []
        for r in self.iterations:
            for k, f in enumerate(factors):
                rows.append([r.index, f, r.diff_mean[k], r.diff_min[k], r.diff_max[k]])
        atomic_write(out / "traj_diff.csv", csv_text(["iteration", "factor", "mean", "min", "max"], rows))
        for r in self.iterations:
            atomic_write(out / f"psi_iter_{r.index}.csv", psi_to_csv(r.psi, names, factors))
            if r.dataset is not None:
                atomic_write(out / f"dataset_iter_{r.index}.jsonl", r.dataset.to_jsonl())
        return out


# ---------------------------------------------------------------- operations

def causality_guided_dr(eps: EnvParamVector, psi, cfg: RandomizationConfig, seed) -> list:
    """M parameter vectors: active parameters uniform in the clipped box around ``eps``."""
    reg = eps.registry
    psi = np.asarray(psi)
    if psi.ndim != 2 or psi.shape[0] != len(reg) or psi.shape[1] != reg.n_factors:
        raise ContractError(f"psi shape {psi.shape} does not match ({len(reg)}, {reg.n_factors})")
    active = psi.max(axis=1) > cfg.threshold
    delta = cfg.fraction * (reg.highs - reg.lows)
    lo = np.maximum(eps.values - delta, reg.lows)
    hi = np.minimum(eps.values + delta, reg.highs)
    rng = np.random.default_rng(seed)
    draws = rng.uniform(lo, hi, size=(cfg.m_samples, len(reg)))
    out = []
    for row in draws:
        vals = np.where(active, row, eps.values)
        out.append(EnvParamVector(reg, vals))
    return out


def build_dataset(real_trajs, sim_rollout, dr_samples, registry: ParamRegistry) -> DifferenceDataset:
    """One row per (n, m) in lexicographic order; ``sim_rollout(eps, action)`` returns a trajectory."""
    if len(dr_samples) != len(real_trajs):
        raise ContractError(f"{len(dr_samples)} DR groups for {len(real_trajs)} real rollouts")
    eps_rows, act_rows, d_rows = [], [], []
    for n, (real, group) in enumerate(zip(real_trajs, dr_samples)):
        for m, eps in enumerate(group):
            try:
                sim = sim_rollout(eps, real.action)
            except SysIdError as exc:
                raise type(exc)(f"rollout (n={n}, m={m}): {exc}") from exc
            eps_rows.append(eps.normalized())
            act_rows.append(real.action)
            d_rows.append(trajectory_difference(sim, real))
    if not d_rows:
        raise ContractError("no rollouts to build a dataset from")
    return DifferenceDataset(np.array(eps_rows), np.array(act_rows), np.array(d_rows))


def _objective(model: CausalModel, graph_matrix, x, actions, graph: CompGraph):
    """Mean over actions and factors of the predicted difference at normalized params ``x``."""
    leaf = graph.leaf(x)
    n_act = len(actions)
    batch = graph.reshape(leaf, (1, -1)) + np.zeros((n_act, len(x)))
    pred = predict_difference(model, graph.const(graph_matrix), batch, actions, graph)
    return leaf, graph.mean(pred)


def optimize_env_params(eps: EnvParamVector, model: CausalModel, actions, cfg: ParamOptConfig,
                        threshold: float = 0.5) -> EnvParamVector:
    """Projected gradient descent on the predicted gap in normalized parameter space.

    The objective is the predicted gap divided by its value at the start point, so
    the step size does not depend on the units of the trajectory difference.
    Parameters whose strongest edge is below ``threshold`` are frozen, and the
    iterate stays within ``cfg.trust_region`` of the start (the region the model
    was trained on).
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.size == 0:
        raise ContractError("optimize_env_params needs at least one action")
    reg = eps.registry
    psi = expected_graph(model.graph_params)
    free = psi.max(axis=1) >= threshold
    x0 = eps.normalized()
    lo, hi = np.zeros_like(x0), np.ones_like(x0)
    if cfg.trust_region is not None:
        lo = np.maximum(lo, x0 - cfg.trust_region)
        hi = np.minimum(hi, x0 + cfg.trust_region)
    x = x0.copy()
    scale = None
    for step in range(cfg.max_steps):
        graph = CompGraph()
        leaf, j = _objective(model, psi, x, actions, graph)
        if scale is None:
            scale = 1.0 / max(float(j.value), 1e-12)
        grads = backward(graph, j, scale=scale)
        grad = grads[leaf]
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite parameter gradient at step {step}")
        x_new = np.clip(x - cfg.step_size * np.where(free, grad, 0.0), lo, hi)
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        if moved < cfg.tolerance:
            break
    raw = EnvParamVector.from_normalized(reg, x).values
    return EnvParamVector(reg, np.where(free, raw, eps.values))


def compute_mape(eps: EnvParamVector, target: EnvParamVector, subset) -> float:
    subset = list(subset)
    if not subset:
        raise ContractError("MAPE subset is empty")
    errs = []
    for name in subset:
        t = target[name]
        if t == 0:
            raise ContractError(f"target value of {name} is 0; exclude it or use absolute error")
        errs.append(abs(eps[name] - t) / abs(t))
    return float(np.mean(errs))


def mape_subset(registry: ParamRegistry, target: EnvParamVector) -> list:
    """Ground-truth-causal parameters with a non-zero target (MAPE is undefined at 0)."""
    return [n for n in registry.causal_names if target[n] != 0]


# ---------------------------------------------------------------- outer loop

def _real_capability(registry: ParamRegistry, target: EnvParamVector, noise_std: float):
    """Opaque rollout function for the hidden "real" environment."""
    def real(action, seed):
        return rollout(registry, target, action, seed=seed, realism=REAL, noise_std=noise_std)
    return real


def _sim_capability(registry: ParamRegistry):
    def sim(eps, action):
        return rollout(registry, eps, action, realism=NOMINAL)
    return sim


def _run(cfg: LoopConfig, target: EnvParamVector, dense: bool, keep_datasets: bool,
         on_iteration=None) -> RunReport:
    reg = default_registry(cfg.env_name)
    if target.registry.env_name != reg.env_name:
        raise ContractError("target belongs to a different environment")
    real = _real_capability(reg, target, cfg.noise_std)
    sim = _sim_capability(reg)
    tcfg = cfg.training
    if dense:
        tcfg = replace(tcfg, learn_graph=False, sparse_weight=0.0)
    gp: CausalGraphParams = init_graph_params(len(reg), reg.n_factors, tcfg.temperature)
    subset = mape_subset(reg, target)
    eps = reg.defaults()
    report = RunReport(reg, cfg, "dense" if dense else "causal")

    for i in range(cfg.max_iter + 1):
        try:
            actions = [scripted_policy_sample(reg, derive_seed(cfg.seed, i, STREAM_ACTIONS, n))
                       for n in range(cfg.n_real)]
            real_trajs = [real(a, derive_seed(cfg.seed, i, STREAM_REAL_NOISE, n))
                          for n, a in enumerate(actions)]
            diffs = np.array([trajectory_difference(sim(eps, t.action), t) for t in real_trajs])
            psi = gp.psi
            record = IterationRecord(
                i, eps, psi, diffs.mean(axis=0), diffs.min(axis=0), diffs.max(axis=0),
                [n for n, keep in zip(reg.names, psi.max(axis=1) > cfg.randomization.threshold) if keep],
                mape=compute_mape(eps, target, subset) if subset else None)
            report.iterations.append(record)
            if record.mean_difference <= cfg.zeta:
                report.status = CONVERGED
                break
            if i == cfg.max_iter:
                break
            groups = [causality_guided_dr(eps, psi, cfg.randomization, derive_seed(cfg.seed, i, STREAM_DR, n))
                      for n in range(cfg.n_real)]
            data = build_dataset(real_trajs, sim, groups, reg)
            lam = tcfg.sparse_weight * tcfg.sw_discount ** i
            result = train(data, tcfg, gp, seed=derive_seed(cfg.seed, i, STREAM_TRAIN),
                           sparse_weight=lam, action_low=reg.action_low, action_high=reg.action_high)
            gp = result.graph_params
            record.sparse_weight = lam
            record.final_loss = result.loss_history[-1]
            if keep_datasets:
                record.dataset = data
            eps = optimize_env_params(eps, result.model, np.array(actions), cfg.param_opt,
                                      cfg.randomization.threshold)
        except SysIdError as exc:
            raise type(exc)(f"iteration {i}: {exc}") from exc
        if on_iteration is not None:
            on_iteration(record)
    return report


def run_compass(cfg: LoopConfig, target: EnvParamVector, keep_datasets: bool = True,
                on_iteration=None) -> RunReport:
    """Causal identification loop; ``target`` is only reachable through the real rollouts and MAPE."""
    return _run(cfg, target, dense=False, keep_datasets=keep_datasets, on_iteration=on_iteration)


def run_baseline_dense(cfg: LoopConfig, target: EnvParamVector, keep_datasets: bool = True,
                       on_iteration=None) -> RunReport:
    """Same loop with the graph frozen fully connected and no sparsity term."""
    return _run(cfg, target, dense=True, keep_datasets=keep_datasets, on_iteration=on_iteration)
