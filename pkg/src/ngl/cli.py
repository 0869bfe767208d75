"""Command-line harness: run experiments, sweep grids, verify, print bounds.

Subcommands:

  run <config>       execute one experiment, write trace.csv + summary.json
  sweep <config>     cross-product of list-valued fields, one run per combo,
                     aggregated into comparison.csv (parallel with --jobs)
  verify             run the built-in invariant suite, print a pass table
  bounds <theorem> <key=value...>  print an envelope table for constants

Exit codes: 0 success, 1 malformed config or input, 2 a guarantee was
violated at run time (an envelope row, a diverged iterate, a driver
missing its certified target), 3 a mathematical hypothesis guard
rejected the configuration (for example alpha > 1/3 with re_agm).
The environment variable NGL_SEED overrides the config's oracle seed.

trace.csv columns are k, f_gap, grad_norm, noisy_grad_norm, bound,
inner_loops; floats are rendered with 17 significant digits so offline
re-verification reproduces the in-process comparison bit for bit.
Fields with no defined value on a row (an unqueried noisy norm, a run
with no printed bound, a non-adaptive solver's inner loops) are "nan".

summary.json keys: final_f_gap (objective gap at the terminal point),
iterations (accepted steps), inner_loop_total (extra backtracking
trials, 0 unless adaptive), envelope_violations (rows exceeding the
bound column, 0 for any conforming run), terminal (reason the run
ended), wall_time_s (seconds).  Identical config and seed give a
byte-identical trace.csv; summary.json differs only in wall_time_s.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import THEOREM_IDS, EnvelopeConstants, EnvelopeDomainError, envelope
from .config import (
    ConfigError,
    ExperimentConfig,
    build_oracle,
    build_problem,
    expand_sweep,
    load_config_file,
    parse_config,
)
from .drivers import (
    ConvergenceFailureError,
    StoppingRule,
    combined_reg_stop,
    restart_to_convex,
    run_with_stopping,
    solve_convex_gd,
    solve_convex_re_agm,
)
from .solvers import (
    AdaptiveGDConfig,
    DivergedError,
    GDConfig,
    InnerLoopStallError,
    ReAgmConfig,
    adaptive_gd_run,
    gd_run,
    re_agm_run,
)
from .verify import run_all_checks

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2
EXIT_GUARD = 3

_VIOLATION_TOL = 1e-9


def _env_seed() -> Optional[int]:
    raw = os.environ.get("NGL_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"NGL_SEED: expected an integer, got {raw!r}")


def _solver_alpha(cfg: ExperimentConfig, oracle) -> float:
    if cfg.alpha_param is not None:
        return cfg.alpha_param
    return oracle.declared_alpha


def _run_experiment(cfg: ExperimentConfig):
    """Assemble and execute one experiment; returns (problem, oracle, trace)."""
    problem = build_problem(cfg)
    oracle = build_oracle(cfg, problem)
    x0 = np.zeros(problem.dim)
    radius = float(np.linalg.norm(problem.x_star - x0))

    if cfg.driver == "none":
        if cfg.solver == "gd":
            run_cfg = GDConfig(steps=cfg.steps, alpha=_solver_alpha(cfg, oracle),
                               L=problem.L)
            trace = gd_run(problem, oracle, run_cfg, x0=x0)
        elif cfg.solver == "re_agm":
            run_cfg = ReAgmConfig(steps=cfg.steps, mu=problem.mu, L=problem.L,
                                  alpha=_solver_alpha(cfg, oracle))
            trace = re_agm_run(problem, oracle, run_cfg, x0=x0)
        else:
            run_cfg = AdaptiveGDConfig(steps=cfg.steps,
                                       L0=cfg.L0 if cfg.L0 is not None else problem.L,
                                       delta=oracle.declared_delta,
                                       adapt_L=cfg.adapt_L)
            trace = adaptive_gd_run(problem, oracle, run_cfg, x0=x0)
    elif cfg.driver == "regularize":
        if cfg.solver == "gd":
            trace = solve_convex_gd(problem, oracle, cfg.epsilon, radius, x0=x0)
        else:
            trace = solve_convex_re_agm(problem, oracle, cfg.epsilon, cfg.beta,
                                        radius, x0=x0)
    elif cfg.driver == "stopping":
        rule = StoppingRule(K=cfg.K, delta=oracle.declared_delta)
        alpha_hat = oracle.declared_alpha + 1.0 / cfg.K
        trace = run_with_stopping(cfg.solver, problem, oracle, rule, alpha_hat,
                                  cfg.steps, x0=x0)
    elif cfg.driver == "restart":
        result = restart_to_convex(cfg.solver, problem, oracle, cfg.epsilon,
                                   x0=x0)
        trace = result.trace
    else:
        trace = combined_reg_stop(problem, oracle, cfg.epsilon, cfg.tau,
                                  radius, x0=x0)
    return problem, oracle, trace


def _trace_envelope(cfg: ExperimentConfig, problem, oracle):
    """The printed bound governing a plain run's gap column, if one applies.

    Driver runs report base-problem gaps on rewritten traces, so no
    single printed curve bounds them; plain gd on a merely convex
    problem has a gradient-norm bound but no gap bound.  Running above
    the declared level keeps the envelope valid, below it does not.
    """
    if cfg.driver != "none":
        return None
    x0 = np.zeros(problem.dim)
    constants = dict(mu=problem.mu, L=problem.L,
                     alpha=oracle.declared_alpha, delta=oracle.declared_delta,
                     f0_gap=problem.gap(x0),
                     R=float(np.linalg.norm(problem.x_star - x0)))
    if cfg.solver == "adaptive_gd":
        tid = "ADAPT_BOTH" if cfg.adapt_L else "ADAPT_ALPHA"
        constants["L0"] = cfg.L0 if cfg.L0 is not None else problem.L
    else:
        if problem.mu <= 0.0:
            return None
        alpha_run = _solver_alpha(cfg, oracle)
        if alpha_run < oracle.declared_alpha:
            return None
        constants["alpha"] = alpha_run
        tid = "GD_PL" if cfg.solver == "gd" else "REAGM"
    try:
        return envelope(tid, EnvelopeConstants(**constants))
    except EnvelopeDomainError:
        return None


def _format_float(v: float) -> str:
    return format(float(v), ".17g")


def _write_trace_csv(path: Path, trace, bound) -> None:
    lines = ["k,f_gap,grad_norm,noisy_grad_norm,bound,inner_loops"]
    inner = trace.inner_loops
    for i in range(len(trace.k)):
        row = [
            format(int(trace.k[i]), "d"),
            _format_float(trace.f_gap[i]),
            _format_float(trace.grad_norm[i]),
            _format_float(trace.noisy_grad_norm[i]),
            _format_float(bound[i]) if bound is not None else "nan",
            format(int(inner[i]), "d") if inner is not None else "nan",
        ]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _execute_core(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Run one experiment and write its artifacts.

    Returns a merge-friendly record: exit code, summary fields, the
    envelope floor and the first iteration at or below ten times it
    (nan when there is no bound or no noise floor).
    """
    record = {
        "code": EXIT_OK, "error": "",
        "final_f_gap": math.nan, "iterations": math.nan,
        "inner_loop_total": 0, "envelope_violations": 0, "terminal": "",
        "floor": math.nan, "iters_to_10x_floor": math.nan,
    }
    t0 = time.perf_counter()
    try:
        problem, oracle, trace = _run_experiment(cfg)
    except (EnvelopeDomainError, ValueError) as exc:
        record["code"] = EXIT_GUARD
        record["error"] = f"hypothesis guard: {exc}"
        return record
    except (ConvergenceFailureError, DivergedError, InnerLoopStallError) as exc:
        record["code"] = EXIT_VIOLATION
        record["error"] = f"guarantee violated: {exc}"
        return record
    wall = time.perf_counter() - t0

    env = _trace_envelope(cfg, problem, oracle)
    bound = None
    violations = 0
    if env is not None:
        bound = env.curve(trace.k)
        tol = _VIOLATION_TOL * max(1.0, float(env.curve(0)))
        violations = int(np.count_nonzero(trace.f_gap > bound + tol))
        record["floor"] = env.floor
        if env.floor > 0.0:
            hits = np.nonzero(trace.f_gap <= 10.0 * env.floor)[0]
            if hits.size:
                record["iters_to_10x_floor"] = int(trace.k[hits[0]])

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trace_csv(out_dir / "trace.csv", trace, bound)
    summary = {
        "final_f_gap": float(trace.final_f_gap),
        "iterations": int(trace.iterations),
        "inner_loop_total": int(trace.total_inner_loops),
        "envelope_violations": violations,
        "terminal": trace.terminal,
        "wall_time_s": wall,
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    record.update(summary)
    record.pop("wall_time_s", None)
    if violations:
        record["code"] = EXIT_VIOLATION
        record["error"] = (f"{violations} trace row(s) exceed the printed "
                           "bound")
    return record


def cmd_run(args) -> int:
    try:
        raw = load_config_file(args.config)
        cfg = parse_config(raw, seed_override=_env_seed())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    record = _execute_core(cfg, Path(cfg.out_dir))
    if record["error"]:
        print(record["error"], file=sys.stderr)
    if record["code"] == EXIT_OK:
        print(f"{cfg.out_dir}: {record['iterations']} iterations, final gap "
              f"{record['final_f_gap']:.6e}, terminal {record['terminal']}")
    return record["code"]


def _sweep_task(item) -> dict:
    index, run_raw, out_dir = item
    try:
        cfg = parse_config(run_raw)
    except ConfigError as exc:  # caught during expansion, kept for safety
        return {"index": index, "code": EXIT_CONFIG,
                "error": f"config error: {exc}"}
    record = _execute_core(cfg, Path(out_dir))
    record["index"] = index
    return record


def _comparison_value(record, key):
    v = record.get(key, math.nan)
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return format(int(v), "d")
    return _format_float(v)


def cmd_sweep(args) -> int:
    try:
        raw = load_config_file(args.config)
        seed = _env_seed()
        if seed is not None:
            raw["oracle.seed"] = seed
        if isinstance(raw.get("output.dir"), list):
            raise ConfigError("output.dir: cannot be swept; runs are placed "
                              "in numbered subdirectories")
        varied, run_dicts = expand_sweep(raw)
        configs = []
        for i, d in enumerate(run_dicts):
            try:
                configs.append(parse_config(d))
            except ConfigError as exc:
                raise ConfigError(f"run {i}: {exc}")
        out_root = Path(configs[0].out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    tasks = [(i, d, str(out_root / f"run_{i:03d}"))
             for i, d in enumerate(run_dicts)]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_sweep_task, tasks))
    else:
        records = [_sweep_task(t) for t in tasks]
    records.sort(key=lambda r: r["index"])

    out_root.mkdir(parents=True, exist_ok=True)
    header = (["run"] + varied
              + ["final_f_gap", "iterations", "terminal", "floor",
                 "iters_to_10x_floor"])
    lines = [",".join(header)]
    for record, (_, run_raw, _) in zip(records, tasks):
        row = [format(record["index"], "d")]
        for key in varied:
            v = run_raw[key]
            row.append(str(v) if isinstance(v, (str, bool))
                       else _format_float(v))
        for key in ("final_f_gap", "iterations", "terminal", "floor",
                    "iters_to_10x_floor"):
            row.append(_comparison_value(record, key))
        lines.append(",".join(row))
    (out_root / "comparison.csv").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")

    worst = EXIT_OK
    for record in records:
        if record.get("error"):
            print(f"run {record['index']}: {record['error']}",
                  file=sys.stderr)
        worst = max(worst, record["code"])
    print(f"{out_root}: {len(records)} runs, comparison.csv written")
    return worst


def cmd_verify(args) -> int:
    results = run_all_checks()
    name_w = max(len(r.name) for r in results)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        all_ok &= r.passed
        print(f"{r.name:<{name_w}}  {status}  {r.seconds:7.2f}s  {r.detail}")
    print(f"{'overall':<{name_w}}  {'PASS' if all_ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_CONFIG


def _parse_constants(pairs):
    known = {"mu", "L", "alpha", "delta", "f0_gap", "R", "L0", "K"}
    required = {"mu", "L", "alpha", "delta", "f0_gap", "R"}
    values = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or key not in known:
            raise ConfigError(f"expected key=value with key in "
                              f"{sorted(known)}, got {pair!r}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
    missing = sorted(required - set(values))
    if missing:
        raise ConfigError(f"missing constant(s): {', '.join(missing)}")
    return EnvelopeConstants(**values)


def cmd_bounds(args) -> int:
    try:
        constants = _parse_constants(args.constants)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        env = envelope(args.theorem, constants)
    except EnvelopeDomainError as exc:
        print(f"hypothesis guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    grid = np.unique(np.concatenate(
        [[0], np.geomspace(1, max(1, args.N), args.points).astype(np.int64)]))

    def opt(v):
        return "none" if v is None else _format_float(v)

    print(f"theorem {args.theorem}: rate {opt(env.rate)}, "
          f"start {opt(env.start)}, floor {_format_float(env.floor)}")
    print("N,bound")
    for n in grid:
        print(f"{int(n)},{_format_float(env.curve(int(n)))}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ngl",
        description="first-order methods under relative-plus-absolute "
                    "gradient noise: runs, sweeps, and bound tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config", help="path to a flat JSON config")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep",
                             help="cross-product of list-valued config fields")
    p_sweep.add_argument("config", help="path to a flat JSON sweep config")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes (default 1)")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the built-in invariant suite")
    p_verify.set_defaults(fn=cmd_verify)

    p_bounds = sub.add_parser("bounds", help="print an envelope table")
    p_bounds.add_argument("theorem", choices=list(THEOREM_IDS))
    p_bounds.add_argument("constants", nargs="*",
                          help="key=value pairs: mu L alpha delta f0_gap R "
                               "[L0] [K]")
    p_bounds.add_argument("--N", type=int, default=10_000,
                          help="largest iteration in the table")
    p_bounds.add_argument("--points", type=int, default=15,
                          help="table rows (log-spaced)")
    p_bounds.set_defaults(fn=cmd_bounds)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "sweep" and args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
