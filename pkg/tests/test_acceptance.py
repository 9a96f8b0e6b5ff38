"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the pytest terminal summary)
before asserting. The loop runs use a smaller predictive model and fewer
epochs than the library defaults so the whole file finishes in about an
hour and a half on one CPU core; the sizes are listed below.
"""
import json
import math
import time

import numpy as np
import pytest

from causal_sysid.causal_model import DifferenceDataset, TrainingConfig, init_graph_params, train
from causal_sysid.cli import main
from causal_sysid.envsim import (AIR_HOCKEY, BOUNCING_BALL, EnvParamVector, FactorizedTrajectory, SimState,
                                 default_registry, integrate_step, resolve_collisions, target_params,
                                 trajectory_difference)
from causal_sysid.envsim.rollout import simulate
from causal_sysid.files import read_csv
from causal_sysid.gradsuite import run_suite
from causal_sysid.loop import LoopConfig, run_baseline_dense, run_compass

SEEDS = (0, 1, 2)
# reduced predictive model for the loop runs; the protocol sizes (10 iterations, N=10, M=64) are kept
LOOP_TRAINING = TrainingConfig(epochs=1000, hidden=(16, 16), emb_dim=8)
TRAINING_DOC = {"epochs": 1000, "hidden": [16, 16], "emb_dim": 8}

AH = default_registry(AIR_HOCKEY)
BB = default_registry(BOUNCING_BALL)


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def pruning_stats(registry, psi):
    keep = psi.max(axis=1) >= 0.5
    causal = [registry.index(n) for n in registry.causal_names]
    inert = [i for i in range(len(registry)) if i not in causal]
    return bool(keep[causal].all()), float(np.mean(~keep[inert])), int(keep[causal].sum()), len(causal)


# ---- 1. gradients

def test_criterion_1_gradcheck(criterion):
    t0 = time.perf_counter()
    results = run_suite(n_trials=100, h=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(results.values())
    ok = worst < 1e-4 and elapsed < 30
    criterion(1, ok, f"max relative error {worst:.2e} over {len(results)} builders x 100 trials, {elapsed:.1f}s")
    assert ok


# ---- 2. trajectory difference

def naive_sum(a, b):
    out = []
    for k in range(a.shape[0]):
        total = 0.0
        for t in range(a.shape[1]):
            total += math.sqrt((a[k, t, 0] - b[k, t, 0]) ** 2 + (a[k, t, 1] - b[k, t, 1]) ** 2)
        out.append(total)
    return np.array(out)


def test_criterion_2_difference_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst, axioms = 0.0, True

    def tr(p):
        return FactorizedTrajectory(p, ("a", "b"), ())

    for _ in range(1000):
        a, b, c = (rng.normal(size=(2, 51, 2)) for _ in range(3))
        dab = trajectory_difference(tr(a), tr(b))
        worst = max(worst, float(np.max(np.abs(dab - naive_sum(a, b)))))
        dba = trajectory_difference(tr(b), tr(a))
        dac = trajectory_difference(tr(a), tr(c))
        dcb = trajectory_difference(tr(c), tr(b))
        axioms &= bool(np.all(dab >= 0) and np.array_equal(dab, dba) and np.all(dab <= dac + dcb + 1e-12))
    ok = worst <= 1e-12 and axioms
    criterion(2, ok, f"1000 pairs, max abs deviation from naive sum {worst:.1e}, metric axioms {'hold' if axioms else 'violated'}")
    assert ok


# ---- 3. physics

def _free(registry, **overrides):
    vals = registry.defaults().values.copy()
    for name, v in overrides.items():
        vals[registry.index(name)] = v
    return EnvParamVector(registry, vals, check=False)


def test_criterion_3_physics_oracles(criterion):
    # ballistic flight on the longest contact-free stretch of puck1
    eps = _free(AH, **{"puck1@dyna@damping": 0.0, "puck1@dyna@friction_sliding": 0.0})
    pos, contacts = simulate(AH, eps, (-0.225, 0.075, 0.0, 0.4))
    times = sorted(c[0] for c in contacts if "puck1" in c[1:]) + [np.inf]
    start, end = max(zip(times[:-1], times[1:]), key=lambda p: min(p[1], AH.horizon * AH.dt) - p[0])
    steps = [t for t in range(AH.horizon + 1) if start < t * AH.dt < end]
    v = (pos[0, steps[1]] - pos[0, steps[0]]) / AH.dt
    ballistic = max(float(np.max(np.abs(pos[0, t] - pos[0, steps[0]] - v * (t - steps[0]) * AH.dt)))
                    for t in steps)

    # elastic equal-mass collisions at random contact angles
    rng = np.random.default_rng(7)
    elastic = _free(AH, **{"puck@dyna@restitution": 1.0})
    r = 0.0255
    worst_p = worst_e = 0.0
    for _ in range(500):
        ang = rng.uniform(0, 2 * np.pi)
        c, s = math.cos(ang), math.sin(ang)
        st = SimState(("puck1", "puck2"), [[-0.3, 0.4], [-0.3 + 2 * r * c, 0.4 + 2 * r * s]],
                      rng.uniform(-2, 2, size=(2, 2)).tolist(), (r, r), (1.0, 1.0))
        out = resolve_collisions(st, elastic)
        p0, p1 = np.array(st.momentum()), np.array(out.momentum())
        scale = max(np.hypot(*p0), st.kinetic_energy(), 1e-12)
        worst_p = max(worst_p, float(np.max(np.abs(p1 - p0))) / scale)
        worst_e = max(worst_e, abs(out.kinetic_energy() - st.kinetic_energy()) / st.kinetic_energy())

    # exponential drag over 40 substeps
    drag = _free(AH, **{"puck1@dyna@friction_sliding": 0.0})
    st = SimState(("puck1",), [[0.0, 0.0]], [[0.6, 0.8]], (r,), (1.0,))
    dt, worst_d = 0.0125, 0.0
    for k in range(1, 41):
        st = integrate_step(st, drag, dt)
        worst_d = max(worst_d, abs(math.hypot(*st.vel[0]) - math.exp(-10.0 * dt * k)) / math.exp(-10.0 * dt * k))

    ok = ballistic <= 1e-9 and worst_p <= 1e-9 and worst_e <= 1e-9 and worst_d <= 1e-9
    criterion(3, ok, f"ballistic {ballistic:.1e} over {len(steps)} frames, momentum {worst_p:.1e}, "
                     f"energy {worst_e:.1e}, drag decay {worst_d:.1e}")
    assert ok


# ---- 4 and 5. full loop on air hockey, causal against dense

@pytest.fixture(scope="module")
def air_hockey_runs():
    target = target_params(AIR_HOCKEY)
    runs = {}
    for seed in SEEDS:
        cfg = LoopConfig(env_name=AIR_HOCKEY, max_iter=10, n_real=10, seed=seed, training=LOOP_TRAINING)
        t0 = time.perf_counter()
        causal = run_compass(cfg, target, keep_datasets=False)
        t1 = time.perf_counter()
        dense = run_baseline_dense(cfg, target, keep_datasets=False)
        runs[seed] = (causal, dense, t1 - t0)
    return runs


def test_criterion_4_gap_closure(air_hockey_runs, criterion):
    closed = better = 0
    parts = []
    for seed, (causal, dense, secs) in air_hockey_runs.items():
        first, last = causal.iterations[0].mean_difference, causal.final.mean_difference
        closed += last <= 0.40 * first
        better += causal.final.mape < dense.final.mape
        parts.append(f"seed {seed}: {first:.2f}->{last:.2f} ({last / first:.2f}x), "
                     f"MAPE {causal.final.mape:.3f} vs dense {dense.final.mape:.3f}, {secs / 60:.1f} min")
    ok = closed >= 2 and better >= 2
    criterion(4, ok, f"gap closed on {closed}/3, MAPE beats dense on {better}/3; " + "; ".join(parts))
    assert ok


@pytest.fixture(scope="module")
def bouncing_ball_runs():
    target = target_params(BOUNCING_BALL)
    return {seed: run_compass(LoopConfig(env_name=BOUNCING_BALL, max_iter=2, n_real=10, seed=seed,
                                         training=LOOP_TRAINING), target, keep_datasets=False)
            for seed in SEEDS}


def test_criterion_5_causal_pruning(air_hockey_runs, bouncing_ball_runs, criterion):
    parts, ah_ok, bb_ok = [], 0, 0
    for seed, (causal, _, _) in air_hockey_runs.items():
        # psi recorded at iteration 2 is the graph after two rounds of training
        kept_all, pruned, kept, n = pruning_stats(AH, causal.iterations[2].psi)
        ah_ok += kept_all and pruned >= 0.8
        parts.append(f"air-hockey seed {seed}: causal kept {kept}/{n}, inert pruned {pruned:.0%}")
    for seed, report in bouncing_ball_runs.items():
        kept_all, pruned, kept, n = pruning_stats(BB, report.iterations[2].psi)
        bb_ok += kept_all and pruned >= 0.8
        parts.append(f"bouncing-ball seed {seed}: causal kept {kept}/{n}, inert pruned {pruned:.0%}")
    ok = ah_ok >= 2 and bb_ok >= 2
    criterion(5, ok, f"air-hockey {ah_ok}/3, bouncing-ball {bb_ok}/3; " + "; ".join(parts))
    assert ok


# ---- 6. sparsity ablation

def test_criterion_6_sparsity_ablation(tmp_path, criterion):
    cfg = write_json(tmp_path / "cfg.json", {"seed": 0, "training": TRAINING_DOC})
    out = tmp_path / "abl"
    assert main(["ablate-sparsity", "--config", cfg, "--out", str(out), "--lambdas", "0.001,0.005,0.01",
                 "--iterations", "2"]) == 0
    _, rows = read_csv((out / "sparsity_ablation.csv").read_text(encoding="utf-8"))
    retained = [int(r[1]) for r in rows]
    edges = [int(r[2]) for r in rows]
    ok = all(a >= b for a, b in zip(retained, retained[1:]))
    criterion(6, ok, f"retained parameters {retained} (edges {edges}) for lambda 0.001, 0.005, 0.01")
    assert ok


# ---- 7. budget ablation

def test_criterion_7_budget_ablation(tmp_path, criterion):
    doc = {"training": {"epochs": 100, "hidden": [16, 16], "emb_dim": 8}}
    cfg = write_json(tmp_path / "cfg.json", doc)
    out = tmp_path / "budget"
    code = main(["ablate-budget", "--config", cfg, "--out", str(out), "--n", "5,10,20", "--m", "32,64,128",
                 "--seeds", "0,1,2", "--iterations", "2"])
    header, rows = read_csv((out / "budget_ablation.csv").read_text(encoding="utf-8"))
    final = {}
    for r in rows:
        final.setdefault((int(r[0]), int(r[1])), []).append(float(r[4]))
    small, large = np.mean(final[(5, 32)]), np.mean(final[(20, 128)])
    ok = code == 0 and len(rows) == 27 and small >= large
    criterion(7, ok, f"{len(rows)} grid rows; mean final difference N=20,M=128 {large:.3f} vs N=5,M=32 {small:.3f}")
    assert ok


# ---- 8. determinism

def test_criterion_8_determinism(tmp_path, criterion):
    doc = {"seed": 3, "loop": {"max_iter": 2, "n_real": 3},
           "training": {"epochs": 30, "hidden": [8], "emb_dim": 4}, "randomization": {"m_samples": 8}}
    cfg = write_json(tmp_path / "cfg.json", doc)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["discover", "--config", cfg, "--out", str(a)]) == 0
    assert main(["discover", "--config", cfg, "--out", str(b)]) == 0
    names = ["report.json", "epsilon_history.csv"] + sorted(p.name for p in a.glob("psi_iter_*.csv"))
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    ok = len(same) == len(names) and len(names) == 5
    criterion(8, ok, f"{len(same)}/{len(names)} files byte-identical across two runs")
    assert ok


# ---- 9. structure recovery on a planted dataset

def test_criterion_9_structure_recovery(criterion):
    hits, times = 0, []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        eps = rng.uniform(size=(640, 10))
        d = np.abs(3 * (eps[:, [2]] - 0.5)) + np.abs(2 * (eps[:, [7]] - 0.5))
        data = DifferenceDataset(eps, rng.uniform(size=(640, 2)), d)
        t0 = time.perf_counter()
        res = train(data, TrainingConfig(epochs=4000, hidden=(8, 8), emb_dim=4, sparse_weight=0.003),
                    init_graph_params(10, 1), seed=seed, action_low=np.zeros(2), action_high=np.ones(2))
        times.append(time.perf_counter() - t0)
        kept = set(np.flatnonzero(res.graph_params.psi.max(axis=1) >= 0.5).tolist())
        hits += kept == {2, 7}
    ok = hits >= 2 and max(times) < 120
    criterion(9, ok, f"exact recovery on {hits}/3 seeds; per-run {', '.join(f'{t:.0f}s' for t in times)} "
                     f"(total {sum(times):.0f}s)")
    assert ok
