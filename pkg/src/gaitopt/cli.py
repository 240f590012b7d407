"""Command-line entry point ``gaitopt``.

Exit codes: 0 success, 2 configuration error, 3 solver stall (or iteration
limit without convergence), 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, bundled_tasks, load_config, resolve_task
from .runner import EXIT_CONFIG, EXIT_OK, run_config, simulate_config


def _threads(n: int | None) -> None:
    if n is not None:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _load(args):
    path = resolve_task(args.task)
    cfg = load_config(path)
    overrides = {}
    if getattr(args, "integrator", None):
        overrides["integrator"] = args.integrator
    if getattr(args, "threads", None):
        overrides["threads"] = args.threads
    if getattr(args, "max_iterations", None) is not None:
        overrides["max_iterations"] = args.max_iterations
    return cfg.with_overrides(**overrides) if overrides else cfg


def _out_dir(args, cfg, suffix: str = "") -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    return Path("runs") / (cfg.name + suffix)


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    res = run_config(cfg, out, seed=args.seed, plots=not args.no_plots)
    if res.solution is not None:
        sol = res.solution
        print(f"{cfg.name}: {res.status} after {sol.iterations_used} iterations, "
              f"cost {sol.cost_trace[0]:.6g} -> {sol.cost:.6g}")
    else:
        print(f"{cfg.name}: {res.status}: {res.message}", file=sys.stderr)
    print(f"artifacts in {out}")
    return res.exit_code


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "-simulate")
    res = simulate_config(cfg, out, seed=args.seed, plots=not args.no_plots)
    if res.message:
        print(res.message, file=sys.stderr)
    for e in res.summary:
        line = f"{e['label']}: completed={e['completed']} max joint error {e['max_joint_error']:.3g} rad"
        if "base_z_min_ratio" in e:
            line += f", min base height {e['base_z_min']:.4f} m ({100 * e['base_z_min_ratio']:.1f}% of optimized)"
        print(line)
    print(f"artifacts in {out}")
    return res.exit_code


def cmd_benchmark(args) -> int:
    from .benchmark import benchmark_runtime, write_benchmark

    cfg = _load(args)
    out = _out_dir(args, cfg, "-benchmark")
    table, fit = benchmark_runtime(cfg, args.steps, repetitions=args.repetitions, iterations=args.iterations)
    write_benchmark(out, cfg, table, fit, plots=not args.no_plots)
    for r in table:
        print(f"N={r['N']:5d}  {r['mean_iteration_time']:.4f} s/iteration (std {r['std_iteration_time']:.4f})")
    print(f"linear fit: slope {fit['slope']:.3e} s/step, R^2 {fit['r2']:.5f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_convergence_report(args) -> int:
    from .benchmark import report_convergence

    out = Path(args.output_dir or "convergence-report")
    report = report_convergence(args.runs, out, plots=not args.no_plots)
    for name, r in report.items():
        its = r["iterations_to_threshold"]
        print(f"{name}: {r['status']}, iterations to threshold {its if its is not None else '-'}, "
              f"final normalized cost {r['normalized'][-1]:.4g}, monotone {r['monotone']}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = _load(args)
    print(f"{cfg.name}: ok (N={cfg.N}, dt={cfg.dt}, {len(cfg.state_names)} states, "
          f"{len(cfg.input_names)} inputs, hash {cfg.config_hash()[:12]})")
    return EXIT_OK


def cmd_list_tasks(args) -> int:
    for name, path in bundled_tasks().items():
        desc = json.loads(path.read_text()).get("description", "")
        print(f"{name:32s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitopt", description="Whole-body trajectory optimization for legged systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every solver iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, task=True):
        if task:
            p.add_argument("task", help="bundled task name or path to a task JSON file")
        p.add_argument("-o", "--output-dir", help="artifact directory (default runs/<task>)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--integrator", choices=("euler", "rk4"), default=None)
        p.add_argument("--max-iterations", type=int, default=None)
        p.add_argument("--no-plots", action="store_true", help="skip the matplotlib figures")

    p = sub.add_parser("solve", help="optimize a task and write its artifacts")
    common(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("simulate", help="solve, then execute on perturbed plants with feedback")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("benchmark", help="wall time per iteration against horizon length")
    common(p)
    p.add_argument("--steps", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000])
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--iterations", type=int, default=3, help="timed iterations per solve")
    p.set_defaults(func=cmd_benchmark)
    p = sub.add_parser("convergence-report", help="normalized cost traces of finished runs")
    p.add_argument("runs", nargs="+", help="output directories written by solve")
    p.add_argument("-o", "--output-dir")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_convergence_report)
    p = sub.add_parser("validate-config", help="parse a task file and report the first error")
    p.add_argument("task")
    p.set_defaults(func=cmd_validate_config)
    p = sub.add_parser("list-tasks", help="list the bundled tasks")
    p.set_defaults(func=cmd_list_tasks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    os.environ.setdefault("MPLBACKEND", "Agg")
    sys.exit(main())
