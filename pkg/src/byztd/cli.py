"""Command-line front end.

Subcommands:

  run       drive a config file end to end, writing CSV traces
  oracle    exact fixed-point report for a saved model file
  verify    structural checks: mixing-matrix conditions over a short
            run plus exhaustive worst-case connectivity
  plotdata  downsample a trace CSV into plain-text plot columns

Exit codes: 0 success, 1 failed checks or simulation errors, 2 missing
or unreadable input files (argparse uses 2 for usage errors as well).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .config import parse_config
from .errors import BudgetExceeded, ByztdError
from .metrics import load_trace_csv
from .mrp import load_model, stationary_distribution
from .runner import build_trial_simulation, run_experiment
from .td import TdParams, sandwich_check, steady_state
from .topology import check_worst_case_connectivity

_RESIDUAL_TOL = 1e-10


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _cmd_run(args: argparse.Namespace) -> int:
    if not os.path.exists(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    result = run_experiment(cfg, out_dir=args.out)
    avg = result.averaged
    diverged = sum(1 for t in result.traces if t.diverged_at is not None)
    print(f"trials: {len(result.traces)} ({diverged} diverged)")
    if len(avg):
        print(f"recorded steps (common): {len(avg)}")
        print(f"final mean squared Bellman error: {_fmt(avg.msbe[-1])}")
        print(f"final mean consensus error: {_fmt(avg.mce[-1])}")
    else:
        print("no common recorded steps (every trial diverged immediately)")
    if result.out_dir:
        print(f"outputs written to {result.out_dir}")
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    if not os.path.exists(args.model):
        print(f"error: model file not found: {args.model}", file=sys.stderr)
        return 2
    model = load_model(args.model)
    rho = stationary_distribution(model)
    params = TdParams(lam=args.lam, discount=model.discount)
    ss = steady_state(model, rho, params)
    residual = float(np.linalg.norm(ss.a_star @ ss.theta_inf + ss.b_star))
    f_fp, f_min, upper = sandwich_check(model, rho, params)

    print(
        f"model: {model.num_states} states, {model.num_agents} agents, "
        f"feature dim {model.feature_dim}, discount {_fmt(model.discount)}"
    )
    print(f"lambda = {_fmt(params.lam)}")
    print("theta_inf = " + " ".join(format(x, ".17g") for x in ss.theta_inf))
    ok = residual < _RESIDUAL_TOL
    mark = f"< {_RESIDUAL_TOL:g}" if ok else f">= {_RESIDUAL_TOL:g} (FAILED)"
    print(f"||A* theta + b*|| = {residual:.3e} {mark}")
    eigs = np.linalg.eigvals(ss.a_star)
    print("A* eigenvalues: " + " ".join(f"{e.real:.6g}{e.imag:+.6g}j" for e in sorted(eigs, key=lambda e: e.real)))
    sym = np.linalg.eigvalsh(0.5 * (ss.a_star + ss.a_star.T))
    print("symmetric part eigenvalues: " + " ".join(f"{e:.6g}" for e in sym))
    print(f"sigma_min = {_fmt(ss.sigma_min)}")
    print(f"objective at fixed point = {_fmt(f_fp)}")
    print(f"best objective = {_fmt(f_min)}")
    print(f"objective upper bound = {_fmt(upper)}")
    return 0 if ok else 1


def _cmd_verify(args: argparse.Namespace) -> int:
    if not os.path.exists(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    cfg = parse_config(args.config)
    sim, chain_ss, attack_ss = build_trial_simulation(cfg, trial=0)
    topo = sim.topology
    for warning in topo.trim_violations():
        print(f"warning: {warning}")

    failed = False
    if cfg.aggregation == "trim":
        report = sim.run_verification(
            args.steps, chain_seed=chain_ss, attack_seed=attack_ss,
            tau_budget=len(topo.honest),
        )
        print(f"mixing matrices checked: {report.checked} "
              f"({args.steps} steps x {sim.model.feature_dim} coordinates)")

        def line(tag: str, desc: str, value: bool | None) -> None:
            nonlocal failed
            if value is None:
                print(f"  ({tag}) {desc}: skipped")
                return
            print(f"  ({tag}) {desc}: {'ok' if value else 'FAILED'}")
            failed = failed or not value

        line("c1", "rows stochastic", report.row_stochastic)
        line("c2", "self weight equals 1/N*", report.self_weight)
        line("c3", "support within the graph", report.support)
        line("c4", f"enough entries at least mu0 = {_fmt(report.mu0)}", report.entry_count)
        line("c5", "entries at most 1/min N*", report.entry_bound)
        line("c6", "positive column of a power", report.positive_column)
        for msg in report.failures:
            print(f"  {msg}")
    else:
        print("mean aggregation: no mixing-matrix conditions to check")

    try:
        conn = check_worst_case_connectivity(topo, max_subgraphs=int(args.budget))
        if conn.holds:
            print(f"worst-case connectivity: holds, tau = {conn.tau} "
                  f"(subgraphs checked: {conn.subgraphs})")
        else:
            print(f"worst-case connectivity: FAILED ({conn.subgraphs} subgraphs)")
            failed = True
    except BudgetExceeded as exc:
        print(f"worst-case connectivity: skipped ({exc})")

    print("all checks passed" if not failed else "some checks FAILED")
    return 1 if failed else 0


def _cmd_plotdata(args: argparse.Namespace) -> int:
    if not os.path.exists(args.csv):
        print(f"error: trace file not found: {args.csv}", file=sys.stderr)
        return 2
    trace = load_trace_csv(args.csv)
    out = args.out if args.out is not None else os.path.dirname(os.path.abspath(args.csv))
    os.makedirs(out, exist_ok=True)
    n = len(trace)
    if n == 0:
        print("error: trace holds no recorded steps", file=sys.stderr)
        return 1
    idx = np.unique(np.linspace(0, n - 1, num=min(args.points, n)).astype(int))

    msbe_path = os.path.join(out, "msbe.txt")
    with open(msbe_path, "w", encoding="ascii") as f:
        for i in idx:
            f.write(f"{int(trace.steps[i])} {format(trace.msbe[i], '.10g')}\n")
    rate_path = os.path.join(out, "mce_rate.txt")
    with open(rate_path, "w", encoding="ascii") as f:
        for i in idx:
            r = trace.mce_rate_ratio[i]
            if not np.isnan(r):
                f.write(f"{int(trace.steps[i])} {format(r, '.10g')}\n")
    print(f"wrote {msbe_path} ({len(idx)} points)")
    print(f"wrote {rate_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byztd",
        description="Byzantine-resilient decentralized TD(lambda): simulate and verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every trial of a config file")
    p_run.add_argument("config", help="INI config file")
    p_run.add_argument("--seed", type=int, default=None, help="override [run] master_seed")
    p_run.add_argument("--trials", type=int, default=None, help="override [run] trials")
    p_run.add_argument("--out", default=None, help="override [run] out directory")
    p_run.add_argument("--quiet", action="store_true", help="log warnings only")
    p_run.set_defaults(func=_cmd_run)

    p_oracle = sub.add_parser("oracle", help="exact fixed-point report for a model file")
    p_oracle.add_argument("model", help="model file (text format)")
    p_oracle.add_argument("--lambda", dest="lam", type=float, required=True,
                          help="trace decay in [0, 1]")
    p_oracle.set_defaults(func=_cmd_oracle, quiet=False)

    p_verify = sub.add_parser("verify", help="structural checks for a config's topology")
    p_verify.add_argument("config", help="INI config file")
    p_verify.add_argument("--steps", type=int, default=50,
                          help="steps of mixing matrices to collect (default 50)")
    p_verify.add_argument("--budget", type=float, default=2e10,
                          help="max worst-case subgraphs to enumerate (default 2e10)")
    p_verify.set_defaults(func=_cmd_verify, quiet=False)

    p_plot = sub.add_parser("plotdata", help="downsample a trace CSV into plot columns")
    p_plot.add_argument("csv", help="trace CSV written by run")
    p_plot.add_argument("--out", default=None, help="output directory (default: beside the CSV)")
    p_plot.add_argument("--points", type=int, default=400, help="max points to keep")
    p_plot.set_defaults(func=_cmd_plotdata, quiet=False)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ByztdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
