"""Matplotlib figures written next to the CSV/JSON artifacts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path.name


def cost_figure(path: Path, traces: dict, title: str = "Normalized cost") -> str:
    """Normalized cost per accepted iteration, one line per task (log scale)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, trace in traces.items():
        trace = np.asarray(trace, dtype=float)
        ax.semilogy(np.arange(len(trace)), np.maximum(trace, 1e-16), marker=".", label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost / initial cost")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if len(traces) > 1:
        ax.legend(fontsize=7)
    return _save(fig, path)


def schedule_figure(path: Path, schedule) -> str:
    """Stance intervals per foot as horizontal bars."""
    fig, ax = plt.subplots(figsize=(7, 0.5 + 0.45 * len(schedule.feet)))
    for i, ivs in enumerate(schedule.intervals):
        ax.broken_barh([(a, b - a) for a, b in ivs], (i - 0.35, 0.7), color="tab:blue")
    ax.set_yticks(range(len(schedule.feet)))
    ax.set_yticklabels(schedule.feet)
    ax.set_xlim(schedule.t_start, schedule.t_final)
    ax.set_xlabel("time [s]")
    ax.set_title("Stance phases")
    return _save(fig, path)


def trajectory_figure(path: Path, cfg, traj) -> str:
    """Base coordinates and inputs over time."""
    names = cfg.state_names
    nb = cfg.model.n_base if cfg.model is not None else len(names) // 2
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    t = traj.times
    for i in range(max(nb, 1)):
        axes[0].plot(t, traj.states[:, i], label=names[i])
    axes[0].set_ylabel("state")
    axes[0].legend(fontsize=7)
    axes[0].grid(alpha=0.3)
    for j in range(traj.inputs.shape[1]):
        axes[1].plot(t[:-1], traj.inputs[:, j], lw=0.8, label=cfg.input_names[j])
    axes[1].set_ylabel("input")
    axes[1].set_xlabel("time [s]")
    axes[1].grid(alpha=0.3)
    if traj.inputs.shape[1] <= 12:
        axes[1].legend(fontsize=6, ncol=2)
    return _save(fig, path)


def solve_figures(out: Path, cfg, solution) -> dict:
    from .schedule import extract_schedule

    arts = {}
    J0 = solution.cost_trace[0]
    arts["cost_figure"] = cost_figure(out / "cost.png", {cfg.name: np.array(solution.cost_trace) / J0})
    arts["trajectory_figure"] = trajectory_figure(out / "trajectory.png", cfg, solution.trajectory)
    if cfg.model is not None and cfg.model.n_feet:
        sched = extract_schedule(solution.trajectory, [f.name for f in cfg.model.feet])
        arts["schedule_figure"] = schedule_figure(out / "schedule.png", sched)
    return arts


def runtime_figure(path: Path, table: list, fit: dict) -> str:
    """Per-iteration wall time against horizon length with the linear fit."""
    N = np.array([r["N"] for r in table], dtype=float)
    t = np.array([r["mean_iteration_time"] for r in table])
    s = np.array([r["std_iteration_time"] for r in table])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(N, t, yerr=s, fmt="o", label="measured")
    xs = np.linspace(0, N.max() * 1.05, 50)
    ax.plot(xs, fit["slope"] * xs + fit["intercept"], "--", label=f"fit, R² = {fit['r2']:.4f}")
    ax.set_xlabel("time steps N")
    ax.set_ylabel("wall time per iteration [s]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def tracking_figure(path: Path, model, logs: dict) -> str:
    """Base height of the plant for each perturbation against the reference."""
    fig, ax = plt.subplots(figsize=(7, 4))
    zi = model.position_names().index("base_z")
    first = True
    for label, lg in logs.items():
        if first:
            ax.plot(lg.times, lg.reference[:, zi], "k--", lw=1, label="optimized")
            first = False
        ax.plot(lg.times, lg.states[:, zi], label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("base height [m]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)
