"""Runtime-per-iteration and convergence studies."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from .config import TaskConfig
from .runner import fmt, write_json
from .slq import PHASES, solve

DEFAULT_STEP_COUNTS = (250, 500, 1000, 2000, 4000)


def linear_fit(x, y) -> dict:
    """Least-squares line ``y = slope x + intercept`` and its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def time_iterations(cfg: TaskConfig, iterations: int) -> list:
    """Wall time per phase for each full SLQ iteration of one solve."""
    bench = cfg.with_overrides(max_iterations=iterations, convergence_threshold=1e-300)
    sol = solve(bench.system, bench.cost, bench.initial_state, bench.initial_controller(), bench.solver)
    # the last record has no line search (iteration limit), so only complete iterations count
    return [r.timing for r in sol.records if r.line_search_steps > 0]


def benchmark_runtime(cfg: TaskConfig, step_counts=DEFAULT_STEP_COUNTS, repetitions: int = 1,
                      iterations: int = 3, warmup: bool = True) -> tuple:
    """Mean per-iteration wall time for each horizon length.

    The step ``dt`` of ``cfg`` is held fixed and the horizon grows as
    ``N dt``, so every run integrates the same dynamics at the same
    resolution (a coarser step can make the initial rollout unstable).

    Returns ``(table, fit)`` where each table row holds N, dt, the mean and
    standard deviation of the per-iteration time and the mean of every phase,
    and ``fit`` is the linear fit of mean time against N.
    """
    if warmup:
        time_iterations(cfg.with_overrides(N=min(step_counts), keep_dt=True), 1)
    table = []
    for N in step_counts:
        c = cfg.with_overrides(N=int(N), keep_dt=True)
        samples = []
        for _ in range(repetitions):
            samples.extend(time_iterations(c, iterations))
        totals = np.array([sum(s.values()) for s in samples])
        row = {
            "N": int(N),
            "dt": c.dt,
            "samples": len(samples),
            "mean_iteration_time": float(totals.mean()) if len(totals) else float("nan"),
            "std_iteration_time": float(totals.std()) if len(totals) else float("nan"),
        }
        for p in PHASES:
            row[f"mean_{p}"] = float(np.mean([s[p] for s in samples])) if samples else float("nan")
        table.append(row)
    fit = linear_fit([r["N"] for r in table], [r["mean_iteration_time"] for r in table])
    return table, fit


def write_benchmark(out: Path, cfg: TaskConfig, table: list, fit: dict, plots: bool = True) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cols = list(table[0].keys())
    with open(out / "runtime.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in table:
            w.writerow([fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    write_json(out / "runtime_fit.json", {"task": cfg.name, "t_f": cfg.t_f, **fit})
    arts = {"runtime": "runtime.csv", "fit": "runtime_fit.json"}
    if plots:
        from .plotting import runtime_figure

        arts["figure"] = runtime_figure(out / "runtime.png", table, fit)
    return arts


def _read_trace(run_dir: Path) -> np.ndarray:
    with open(run_dir / "cost_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["normalized_cost"]) for r in rows])


def report_convergence(run_dirs, output_dir=None, plots: bool = True) -> dict:
    """Normalized cost traces and iterations-to-threshold of completed runs.

    ``run_dirs`` are output directories (or their ``manifest.json``) written
    by a solve.  Writes ``convergence.csv`` (long format) and
    ``convergence_summary.csv`` when ``output_dir`` is given.
    """
    report = {}
    for rd in run_dirs:
        rd = Path(rd)
        if rd.name == "manifest.json":
            rd = rd.parent
        manifest = json.loads((rd / "manifest.json").read_text())
        diag = json.loads((rd / "diagnostics.json").read_text())
        trace = _read_trace(rd)
        report[manifest["task"]] = {
            "normalized": trace,
            "status": diag["status"],
            "converged": diag.get("converged", False),
            "iterations_to_threshold": diag["iterations_used"] if diag.get("converged") else None,
            "threshold": diag.get("convergence_threshold"),
            "monotone": bool(np.all(np.diff(trace) <= 0)),
            "wall_time": float(sum(sum(r["timing"].values()) for r in diag.get("iterations", []))),
        }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "iteration", "normalized_cost"])
            for name, r in report.items():
                for i, v in enumerate(r["normalized"]):
                    w.writerow([name, i, fmt(v)])
        with open(out / "convergence_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "status", "iterations_to_threshold", "threshold", "final_normalized_cost",
                        "monotone", "wall_time_s"])
            for name, r in report.items():
                w.writerow([name, r["status"], "" if r["iterations_to_threshold"] is None else r["iterations_to_threshold"],
                            r["threshold"], fmt(r["normalized"][-1]), r["monotone"], f"{r['wall_time']:.3f}"])
        if plots:
            from .plotting import cost_figure

            cost_figure(out / "convergence.png", {k: v["normalized"] for k, v in report.items()})
    return report


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t
