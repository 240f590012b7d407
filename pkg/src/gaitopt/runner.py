"""Run tasks and write their artifacts.

Every solve writes into its output directory:

* ``trajectory.csv``  time, states, inputs, per-foot contact force and in-contact flag
* ``cost_trace.csv``  accepted-iteration costs (raw and normalized by the initial cost)
* ``schedule.json``   stance intervals and gait statistics
* ``diagnostics.json`` solver status and per-iteration records with phase timings
* ``manifest.json``   config hash, seed, versions and the artifact list
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, TaskConfig, load_config
from .dynamics import DynamicsError, Trajectory
from .schedule import extract_schedule, gait_statistics
from .slq import BackwardPassError, InitialRolloutError, SlqSolution, solve

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALLED = 3
EXIT_DIVERGED = 4


def fmt(v: float) -> str:
    """Shortest round-trip representation; deterministic across runs."""
    return repr(float(v))


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "numba", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def trajectory_columns(cfg: TaskConfig) -> list:
    cols = ["t"] + list(cfg.state_names) + list(cfg.input_names)
    if cfg.model is not None:
        comps = ("x", "z") if cfg.model.planar else ("x", "y", "z")
        for foot in cfg.model.feet:
            cols += [f"{foot.name}_f{c}" for c in comps] + [f"{foot.name}_contact"]
    return cols


def write_trajectory_csv(path: Path, cfg: TaskConfig, traj: Trajectory) -> None:
    """One row per knot; the last knot has no input and leaves those cells empty."""
    forces = cfg.system.contact_forces(traj)
    comps = [0, 2] if cfg.model is not None and cfg.model.planar else [0, 1, 2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_columns(cfg))
        for k in range(traj.N + 1):
            row = [fmt(traj.times[k])] + [fmt(v) for v in traj.states[k]]
            row += [fmt(v) for v in traj.inputs[k]] if k < traj.N else [""] * traj.inputs.shape[1]
            for f in range(cfg.system.n_feet):
                row += [fmt(forces[k, f, c]) for c in comps]
                row.append("1" if traj.hidden[k, f, 0] > 0.5 else "0")
            w.writerow(row)


def read_trajectory_csv(path) -> tuple:
    """Header and float array (empty cells as NaN) of a trajectory CSV."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) if v else np.nan for v in r] for r in rows[1:]])
    return rows[0], data


def write_cost_trace(path: Path, solution: SlqSolution) -> None:
    J0 = solution.cost_trace[0]
    accepted = [r for r in solution.records if r.line_search_steps > 0 and r.alpha > 0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cost", "normalized_cost", "alpha", "max_ff_increment"])
        w.writerow([0, fmt(J0), fmt(1.0), "", ""])
        for i, J in enumerate(solution.cost_trace[1:], start=1):
            r = accepted[i - 1]
            w.writerow([i, fmt(J), fmt(J / J0 if J0 != 0 else 0.0), fmt(r.alpha), fmt(r.max_ff_increment)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def task_metrics(cfg: TaskConfig, traj: Trajectory) -> dict:
    """Final state, base extremes and per-waypoint accuracy."""
    names = cfg.state_names
    out = {"final_state": dict(zip(names, traj.final_state))}
    x_des = cfg.cost.x_des if cfg.cost.x_des.ndim == 1 else cfg.cost.x_des[-1]
    weighted = np.nonzero(np.diag(cfg.cost.H) > 0)[0]
    out["final_error"] = {names[i]: float(traj.final_state[i] - x_des[i]) for i in weighted}
    if "base_z" in names:
        z = traj.states[:, names.index("base_z")]
        out["base_z_min"] = float(z.min())
        out["base_z_max"] = float(z.max())
        out["base_z_max_time"] = float(traj.times[int(np.argmax(z))])
    if cfg.model is not None and cfg.model.n_feet:
        # tangential travel of each foot while it stays in contact
        pos = cfg.system.foot_positions(traj.states)
        n = cfg.plane.normal
        d = np.diff(pos, axis=0)
        d_t = d - (d @ n)[..., None] * n
        stuck = (traj.hidden[:-1, :, 0] > 0.5) & (traj.hidden[1:, :, 0] > 0.5)
        slip = (np.linalg.norm(d_t, axis=-1) * stuck).sum(axis=0)
        out["stance_slip"] = {f.name: float(s) for f, s in zip(cfg.model.feet, slip)}
    wps = []
    for wp in cfg.cost.waypoints:
        k = int(round(wp.t_p / traj.dt))
        idx = np.nonzero(np.diag(wp.W) > 0)[0]
        entry = {"name": wp.name, "t": wp.t_p,
                 "at_t": {names[i]: float(traj.states[k, i]) for i in idx},
                 "target": {names[i]: float(wp.x_wp[i]) for i in idx}}
        # extreme value inside the window support, e.g. the apex of a jump
        half = 6.0 / np.sqrt(wp.rho)
        sel = np.abs(traj.times - wp.t_p) <= half
        entry["closest_in_window"] = {
            names[i]: float(traj.states[sel, i][np.argmin(np.abs(traj.states[sel, i] - wp.x_wp[i]))]) for i in idx
        }
        if "base_z" in names:
            zi = names.index("base_z")
            entry["base_z_max_in_window"] = float(traj.states[sel, zi].max())
        wps.append(entry)
    out["waypoints"] = wps
    return out


@dataclass
class RunResult:
    exit_code: int
    status: str
    message: str = ""
    solution: SlqSolution | None = None
    config: TaskConfig | None = None
    output_dir: Path | None = None
    artifacts: dict = field(default_factory=dict)
    schedule: object = None
    statistics: object = None
    metrics: dict = field(default_factory=dict)


def status_exit_code(status: str) -> int:
    return EXIT_OK if status == "converged" else EXIT_STALLED


def run_config(cfg: TaskConfig, output_dir=None, seed: int = 0, write: bool = True,
               plots: bool = False) -> RunResult:
    """Solve ``cfg`` and (optionally) write its artifacts to ``output_dir``."""
    x0 = cfg.initial_state
    try:
        solution = solve(cfg.system, cfg.cost, x0, cfg.initial_controller(), cfg.solver)
    except (InitialRolloutError, BackwardPassError, DynamicsError) as exc:
        where = getattr(exc, "time_index", None)
        msg = f"{type(exc).__name__}: {exc}"
        if where is not None and "step" not in str(exc):
            msg += f" (time index {where})"
        res = RunResult(EXIT_DIVERGED, "diverged", msg, config=cfg)
        if write and output_dir is not None:
            out = Path(output_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "diagnostics.json", {"task": cfg.name, "status": "diverged", "message": msg})
            write_manifest(out, cfg, seed, "diverged", {"diagnostics": "diagnostics.json"})
        return res
    traj = solution.trajectory
    res = RunResult(status_exit_code(solution.status), solution.status, solution=solution, config=cfg)
    res.metrics = task_metrics(cfg, traj)
    if cfg.model is not None and cfg.model.n_feet:
        res.schedule = extract_schedule(traj, [f.name for f in cfg.model.feet])
        res.statistics = gait_statistics(res.schedule)
    if not write or output_dir is None:
        return res
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.output_dir = out
    arts = {"trajectory": "trajectory.csv", "cost_trace": "cost_trace.csv", "diagnostics": "diagnostics.json"}
    write_trajectory_csv(out / arts["trajectory"], cfg, traj)
    write_cost_trace(out / arts["cost_trace"], solution)
    if res.schedule is not None:
        arts["schedule"] = "schedule.json"
        write_json(out / arts["schedule"], {**res.schedule.as_dict(), "statistics": res.statistics.as_dict()})
    write_json(out / arts["diagnostics"], {
        "task": cfg.name,
        "status": solution.status,
        "converged": solution.converged,
        "iterations_used": solution.iterations_used,
        "initial_cost": solution.cost_trace[0],
        "final_cost": solution.cost,
        "convergence_threshold": cfg.solver.convergence_threshold,
        "N": cfg.N,
        "dt": cfg.dt,
        "metrics": res.metrics,
        "iterations": [r.as_dict() for r in solution.records],
    })
    if plots:
        from . import plotting

        arts.update(plotting.solve_figures(out, cfg, solution))
    write_manifest(out, cfg, seed, solution.status, arts)
    res.artifacts = arts
    return res


def write_manifest(out: Path, cfg: TaskConfig, seed: int, status: str, artifacts: dict) -> None:
    write_json(out / "manifest.json", {
        "task": cfg.name,
        "config_path": str(cfg.source) if cfg.source else None,
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "integrator": cfg.solver.integrator.method,
        "dt": cfg.dt,
        "threads": cfg.solver.threads,
        "status": status,
        "versions": versions(),
        "platform": sys.platform,
        "artifacts": artifacts,
    })


def run_task(config_path, output_dir, seed: int = 0, threads: int | None = None,
             integrator: str | None = None, plots: bool = False) -> RunResult:
    """Load, validate and solve a task file; config errors return exit code 2."""
    try:
        cfg = load_config(config_path)
        if threads is not None or integrator is not None:
            cfg = cfg.with_overrides(integrator=integrator, threads=threads)
    except ConfigError as exc:
        return RunResult(EXIT_CONFIG, "config_error", str(exc))
    return run_config(cfg, output_dir, seed=seed, plots=plots)


def _perturbation_label(p) -> str:
    parts = [f"mass x{p.mass_scale:g}"]
    if p.contact_param_scale != 1.0:
        parts.append(f"contact x{p.contact_param_scale:g}")
    if p.torque_noise_std > 0:
        parts.append(f"noise {p.torque_noise_std:g}")
    if p.initial_state_offset is not None and np.any(p.initial_state_offset):
        parts.append("offset x0")
    return ", ".join(parts)


def write_execution_csv(path: Path, cfg: TaskConfig, log_) -> None:
    """Plant states, reference, commanded torques and detected stance per control tick."""
    names = cfg.state_names
    feet = [f.name for f in cfg.model.feet]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + names + [f"ref_{s}" for s in names] + [f"tau_{u}" for u in cfg.input_names]
                   + [f"{f}_stance" for f in feet])
        n_ticks = log_.tau_cmd.shape[0]
        for c in range(len(log_.times)):
            row = [fmt(log_.times[c])] + [fmt(v) for v in log_.states[c]] + [fmt(v) for v in log_.reference[c]]
            if c < n_ticks:
                row += [fmt(v) for v in log_.tau_cmd[c]] + ["1" if s else "0" for s in log_.stance[c]]
            else:
                row += [""] * (len(cfg.input_names) + len(feet))
            w.writerow(row)


@dataclass
class SimulationResult:
    exit_code: int
    status: str
    message: str = ""
    solve: RunResult | None = None
    logs: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)


def simulate_config(cfg: TaskConfig, output_dir=None, seed: int = 0, plots: bool = False,
                    solve_result: RunResult | None = None) -> SimulationResult:
    """Solve ``cfg`` and execute the result on each perturbed plant of its tracking block.

    The summary compares the minimum base height of every execution with the
    minimum of the optimized trajectory.
    """
    from .tracking import TrackingGains, simulate_closed_loop

    if cfg.model is None:
        return SimulationResult(EXIT_CONFIG, "config_error", "simulate needs a rigid-body model")
    sub = None if output_dir is None else Path(output_dir) / "solve"
    res = solve_result or run_config(cfg, sub, seed=seed, write=sub is not None, plots=plots)
    if res.solution is None:
        return SimulationResult(res.exit_code, res.status, res.message, res)
    tracking = cfg.tracking
    if tracking is None:
        from .config import TrackingConfig
        from .tracking import PlantPerturbation

        # the model's PD gains are only known to be stable when applied every step
        m = cfg.model
        tracking = TrackingConfig(TrackingGains(m.pd_kp, m.pd_kd, np.zeros((m.n_base, m.n_base)),
                                                np.zeros((m.n_base, m.n_base))), [PlantPerturbation()],
                                  control_dt=cfg.dt, sim_dt=cfg.dt)
    names = cfg.state_names
    zi = names.index("base_z") if "base_z" in names else None
    ref_min = float(res.solution.trajectory.states[:, zi].min()) if zi is not None else None
    logs, summary = {}, []
    for i, pert in enumerate(tracking.perturbations):
        label = _perturbation_label(pert)
        lg = simulate_closed_loop(cfg.system, res.solution, tracking.gains, pert, tracking.control_dt,
                                  sim_dt=tracking.sim_dt, contact_threshold=tracking.contact_threshold, seed=seed + i,
                                  integrator=cfg.solver.integrator.method)
        logs[label] = lg
        je = np.abs(lg.joint_errors(cfg.model))
        entry = {
            "label": label,
            "mass_scale": pert.mass_scale,
            "contact_param_scale": pert.contact_param_scale,
            "torque_noise_std": pert.torque_noise_std,
            "completed": lg.completed,
            "max_joint_error": float(je.max()) if je.size else 0.0,
            "max_base_error": float(np.abs(lg.base_errors(cfg.model)).max()),
        }
        if zi is not None:
            zmin = float(lg.states[:, zi].min())
            entry["base_z_min"] = zmin
            entry["reference_base_z_min"] = ref_min
            entry["base_z_min_ratio"] = zmin / ref_min if ref_min else None
        summary.append(entry)
    out = SimulationResult(EXIT_OK, res.status, solve=res, logs=logs, summary=summary)
    notes = []
    if res.exit_code != EXIT_OK:
        out.exit_code = res.exit_code
        notes.append("solver did not converge; executed the last iterate")
    if not all(e["completed"] for e in summary):
        out.exit_code = EXIT_DIVERGED
        notes.append("closed-loop execution diverged: " + ", ".join(e["label"] for e in summary if not e["completed"]))
    out.message = "; ".join(notes)
    if output_dir is None:
        return out
    od = Path(output_dir)
    od.mkdir(parents=True, exist_ok=True)
    arts = {}
    for i, (label, lg) in enumerate(logs.items()):
        name = f"execution_{i}.csv"
        write_execution_csv(od / name, cfg, lg)
        arts[f"execution_{i}"] = name
    write_json(od / "tracking.json", {"task": cfg.name, "control_dt": tracking.control_dt, "sim_dt": tracking.sim_dt,
                                      "solver_status": res.status, "executions": summary})
    arts["tracking"] = "tracking.json"
    if plots and zi is not None:
        from .plotting import tracking_figure

        arts["tracking_figure"] = tracking_figure(od / "tracking.png", cfg.model, logs)
    write_manifest(od, cfg, seed, res.status, arts)
    return out
