"""Command-line entry point.  Exit codes: 0 success, 2 configuration error, 3 numeric error."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, load_config
from .envsim import (NOMINAL, REAL, default_registry, rollout, scripted_policy_sample, target_params)
from .errors import ConfigError, DomainError, NumericError, SysIdError
from .files import atomic_write, csv_text
from .gradsuite import run_suite
from .loop import run_baseline_dense, run_compass
from .plots import render_run_dir

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causal-sysid", description="Causal-graph-guided system identification.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def run_args(sp, out_required=True):
        sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--env", help="environment name (overrides the config)")

    run_args(sub.add_parser("discover", help="run the causal identification loop"))
    run_args(sub.add_parser("baseline-dense", help="same loop with a fixed dense graph"))

    sp = sub.add_parser("rollout", help="write one trajectory as CSV")
    sp.add_argument("--env", default="air-hockey-2d")
    sp.add_argument("--seed", type=int, default=0, help="policy/noise seed")
    sp.add_argument("--params", choices=("default", "target"), default="default")
    sp.add_argument("--action", type=_float_list, help="explicit action (comma separated)")
    sp.add_argument("--noise-std", type=float, default=0.0)
    sp.add_argument("--out", help="CSV path (stdout when omitted)")

    sp = sub.add_parser("gradcheck", help="finite-difference check of the autodiff engine")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("ablate-sparsity", help="sweep the sparsity weight, count retained edges")
    run_args(sp)
    sp.add_argument("--lambdas", type=_float_list, default=[0.001, 0.005, 0.01])
    sp.add_argument("--iterations", type=int, default=2, help="outer iterations per value")

    sp = sub.add_parser("ablate-budget", help="sweep N and M, tabulate trajectory differences")
    run_args(sp)
    sp.add_argument("--n", type=_int_list, default=[5, 10, 20])
    sp.add_argument("--m", type=_int_list, default=[32, 64, 128])
    sp.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    sp.add_argument("--iterations", type=int, help="outer iterations per cell (config value when omitted)")

    sp = sub.add_parser("plot", help="render run-directory CSVs to SVG")
    sp.add_argument("--input", required=True, help="run directory")
    sp.add_argument("--out", help="SVG directory (defaults to the run directory)")
    return p


def _run_config(args) -> RunConfig:
    rc = load_config(args.config) if args.config else config_from_dict({})
    loop = rc.loop
    if args.env is not None:
        default_registry(args.env)
        loop = replace(loop, env_name=args.env)
    if args.seed is not None:
        loop = replace(loop, seed=args.seed)
    return RunConfig(loop, args.out or rc.out_dir)


def _print_report(report, out):
    first, last = report.iterations[0], report.final
    print(f"{report.mode}: {len(report.iterations)} iterations, status {report.status}")
    print(f"mean trajectory difference {first.mean_difference:.6g} -> {last.mean_difference:.6g}")
    if last.mape is not None:
        print(f"MAPE (causal subset) {first.mape:.6g} -> {last.mape:.6g}")
    print(f"active parameters: {len(last.active)}/{len(report.registry)}")
    print(f"wrote {out}")


def cmd_discover(args, dense=False) -> int:
    rc = _run_config(args)
    target = target_params(rc.loop.env_name)
    runner = run_baseline_dense if dense else run_compass
    report = runner(rc.loop, target)
    out = report.write(rc.out_dir)
    atomic_write(Path(out) / "config.json", rc.to_json())
    _print_report(report, out)
    return EXIT_OK


def cmd_rollout(args) -> int:
    reg = default_registry(args.env)
    eps = target_params(args.env, reg) if args.params == "target" else reg.defaults()
    action = args.action if args.action is not None else scripted_policy_sample(reg, args.seed)
    realism = REAL if args.noise_std > 0 else NOMINAL
    traj = rollout(reg, eps, action, seed=args.seed, realism=realism, noise_std=args.noise_std)
    text = traj.to_csv()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise ConfigError("must be >= 1", field="--trials")
    results = run_suite(n_trials=args.trials, h=1e-5, seed=args.seed)
    for name, err in results.items():
        print(f"{name:>14s}  max rel err {err:.3e}")
    worst = max(results.values())
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} < {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablate_sparsity(args) -> int:
    rc = _run_config(args)
    if args.iterations < 1:
        raise ConfigError("must be >= 1", field="--iterations")
    target = target_params(rc.loop.env_name)
    rows = []
    for lam in args.lambdas:
        if lam < 0:
            raise ConfigError(f"sparsity weight must be >= 0, got {lam!r}", field="--lambdas")
        loop = replace(rc.loop, max_iter=args.iterations,
                       training=replace(rc.loop.training, sparse_weight=lam))
        report = run_compass(loop, target, keep_datasets=False)
        psi = report.final.psi
        retained = int(np.sum(psi.max(axis=1) >= 0.5))
        edges = int(np.sum(psi >= 0.5))
        rows.append([lam, retained, edges, report.final.mean_difference])
        print(f"lambda={lam:g}  retained parameters {retained}  retained edges {edges}")
    out = Path(rc.out_dir)
    atomic_write(out / "sparsity_ablation.csv",
                 csv_text(["lambda", "retained_params", "retained_edges", "final_mean_difference"], rows))
    print(f"wrote {out / 'sparsity_ablation.csv'}")
    return EXIT_OK


def cmd_ablate_budget(args) -> int:
    rc = _run_config(args)
    target = target_params(rc.loop.env_name)
    iterations = args.iterations if args.iterations is not None else rc.loop.max_iter
    rows = []
    for n in args.n:
        for m in args.m:
            for seed in args.seeds:
                try:
                    loop = replace(rc.loop, n_real=n, seed=seed, max_iter=iterations,
                                   randomization=replace(rc.loop.randomization, m_samples=m))
                except ConfigError as exc:
                    raise ConfigError(f"N={n}, M={m}: {exc}") from None
                report = run_compass(loop, target, keep_datasets=False)
                first, last = report.iterations[0], report.final
                rows.append([n, m, seed, first.mean_difference, last.mean_difference])
                print(f"N={n:<3d} M={m:<4d} seed={seed}  difference {first.mean_difference:.5g} "
                      f"-> {last.mean_difference:.5g}")
    out = Path(rc.out_dir)
    atomic_write(out / "budget_ablation.csv",
                 csv_text(["n", "m", "seed", "initial_mean_difference", "final_mean_difference"], rows))
    print(f"wrote {out / 'budget_ablation.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        written = render_run_dir(args.input, args.out)
    except (FileNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for path in written:
        print(path)
    return EXIT_OK


COMMANDS = {
    "discover": cmd_discover,
    "baseline-dense": lambda a: cmd_discover(a, dense=True),
    "rollout": cmd_rollout,
    "gradcheck": cmd_gradcheck,
    "ablate-sparsity": cmd_ablate_sparsity,
    "ablate-budget": cmd_ablate_budget,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SysIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
