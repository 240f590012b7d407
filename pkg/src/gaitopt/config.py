"""JSON task configuration: loading, validation and construction of solver inputs.

A task file looks like::

    {
      "name": "quadruped-reach",
      "model_file": "planar_quadruped.json",
      "t_f": 2.0,                      # horizon, s
      "dt": 0.004,                     # integration step, s (t_f / dt must be an integer)
      "initial_state": {"base_x": 0},  # overrides of the model's default state
      "cost": {
        "final_weights": {"base_x": 1000, "base_*": 100},
        "state_weights": {...}, "input_weights": 0.01,
        "x_des": {"base_x": 1.0},      # overrides of the initial state
        "waypoints": [{"t": 0.5, "rho": 2000, "weights": {...}, "state": {...}}]
      },
      "contact": {"alpha_c": 0.01, "k_n": 20000, ...},
      "plane": {"height": 0.0} | {"incline": 0.1} | {"point": [...], "normal": [...]},
      "solver": {"max_iterations": 100, "convergence_threshold": 1e-4, ...},
      "tracking": {...}                # optional closed-loop experiment
    }

Weight and state specifications accept a full list, a scalar applied to every
entry, or a mapping from state/input names to values.  Mapping keys may be
shell-style patterns (``"*_dot"``); later keys override earlier ones and
unmatched entries default to zero.  Diagonal weights may also be given as a
full matrix (list of lists).
"""

from __future__ import annotations

import copy
import fnmatch
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .contact import ContactParams, GroundPlane
from .cost import CostSpec, WaypointTerm
from .dynamics import AffineController, IntegratorChoice, LinearSystem, System
from .rigidbody import ModelError, RigidBodyModel, RigidBodySystem
from .slq import SolverSettings
from .tracking import PlantPerturbation, TrackingGains


class ConfigError(ValueError):
    """Invalid task configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def bundled_dir(kind: str) -> Path:
    """Directory of bundled ``models`` or ``tasks``."""
    return Path(str(resources.files("gaitopt") / "data" / kind))


def bundled_tasks() -> dict:
    """Bundled task name -> config path."""
    return {p.stem: p for p in sorted(bundled_dir("tasks").glob("*.json"))}


def resolve_task(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    tasks = bundled_tasks()
    if str(name_or_path) in tasks:
        return tasks[str(name_or_path)]
    raise ConfigError("", f"no config file or bundled task named {str(name_or_path)!r}")


# -- field parsers -----------------------------------------------------------


def _number(value, path: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(path, "must be non-negative")
    return v


def _vector(spec, names: list, path: str, base=None) -> np.ndarray:
    """Vector over ``names`` from a list, scalar or name/pattern mapping."""
    n = len(names)
    out = np.zeros(n) if base is None else np.array(base, dtype=float)
    if spec is None:
        return out
    if isinstance(spec, dict):
        for key, value in spec.items():
            hits = [i for i, nm in enumerate(names) if fnmatch.fnmatchcase(nm, key)]
            if not hits:
                raise ConfigError(f"{path}.{key}", f"matches none of {names}")
            out[hits] = _number(value, f"{path}.{key}")
        return out
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        out[:] = _number(spec, path)
        return out
    if isinstance(spec, list):
        if len(spec) != n:
            raise ConfigError(path, f"expected {n} entries, got {len(spec)}")
        return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(spec)])
    raise ConfigError(path, f"expected a list, number or mapping, got {type(spec).__name__}")


def _weights(spec, names: list, path: str) -> np.ndarray:
    """Weight matrix: a diagonal spec (see ``_vector``) or a full matrix."""
    n = len(names)
    if isinstance(spec, list) and spec and isinstance(spec[0], list):
        M = np.array(spec, dtype=float)
        if M.shape != (n, n):
            raise ConfigError(path, f"expected a {n}x{n} matrix, got shape {M.shape}")
        return M
    d = _vector(spec, names, path)
    if np.any(d < 0):
        raise ConfigError(path, "weights must be non-negative")
    return np.diag(d)


def _plane(spec, path: str = "plane") -> GroundPlane:
    if spec is None:
        return GroundPlane.flat()
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected a mapping")
    try:
        if "point" in spec or "normal" in spec:
            return GroundPlane(np.asarray(spec.get("point", [0, 0, 0]), float), np.asarray(spec["normal"], float))
        if "incline" in spec:
            return GroundPlane.inclined(_number(spec["incline"], f"{path}.incline"), float(spec.get("height", 0.0)))
        return GroundPlane.flat(_number(spec.get("height", 0.0), f"{path}.height"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


_CONTACT_FIELDS = ("alpha_c", "k_n", "d_n", "k_t", "d_t", "mu")
_SOLVER_FIELDS = ("max_iterations", "alpha_d", "max_line_search_steps", "convergence_threshold",
                  "regularization_epsilon", "parallel", "threads", "integrator")


def _check_keys(spec: dict, allowed, path: str):
    for key in spec:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def _contact(spec) -> ContactParams:
    spec = spec or {}
    _check_keys(spec, _CONTACT_FIELDS, "contact")
    values = {k: _number(v, f"contact.{k}") for k, v in spec.items()}
    try:
        return ContactParams(**values)
    except ValueError as exc:
        raise ConfigError("contact", str(exc)) from None


def _solver(spec, dt: float) -> SolverSettings:
    spec = dict(spec or {})
    _check_keys(spec, _SOLVER_FIELDS, "solver")
    method = spec.pop("integrator", "rk4")
    kwargs = {}
    for key, value in spec.items():
        if key == "parallel":
            if not isinstance(value, bool):
                raise ConfigError("solver.parallel", "expected true or false")
            kwargs[key] = value
        elif key in ("max_iterations", "max_line_search_steps", "threads"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"solver.{key}", "expected an integer")
            kwargs[key] = value
        else:
            kwargs[key] = _number(value, f"solver.{key}")
    try:
        return SolverSettings(integrator=IntegratorChoice(method, dt), **kwargs)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


@dataclass
class TrackingConfig:
    gains: TrackingGains
    perturbations: list
    control_dt: float = 0.005
    contact_threshold: float | None = None
    sim_dt: float | None = None


@dataclass
class TaskConfig:
    name: str
    description: str
    system: System
    model: RigidBodyModel | None
    t_f: float
    dt: float
    initial_state: np.ndarray
    cost: CostSpec
    contact: ContactParams
    plane: GroundPlane
    solver: SolverSettings
    state_names: list
    input_names: list
    init_controller: dict = field(default_factory=dict)
    tracking: TrackingConfig | None = None
    metrics: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    source: Path | None = None
    model_text: str = ""

    @property
    def N(self) -> int:
        return int(round(self.t_f / self.dt))

    @property
    def integrator(self) -> IntegratorChoice:
        return self.solver.integrator

    def config_hash(self) -> str:
        """SHA-256 over the canonical config JSON and the model file contents."""
        h = hashlib.sha256()
        h.update(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode())
        h.update(self.model_text.encode())
        return h.hexdigest()

    def initial_controller(self) -> AffineController:
        kind = self.init_controller.get("type", "pd_hold")
        N = self.N
        if kind == "zero" or self.model is None:
            return AffineController(np.zeros((N, self.system.n_inputs)),
                                    np.zeros((N, self.system.n_inputs, self.system.n_states)),
                                    np.repeat(self.initial_state[None], N + 1, axis=0))
        return self.system.hold_controller(
            self.initial_state, N, gravity_compensation=self.init_controller.get("gravity_compensation", True)
        )

    def with_overrides(self, integrator: str | None = None, threads: int | None = None,
                       N: int | None = None, max_iterations: int | None = None,
                       convergence_threshold: float | None = None, keep_dt: bool = False) -> "TaskConfig":
        """Copy with solver overrides.

        ``N`` rescales ``dt`` holding ``t_f``, or with ``keep_dt`` stretches the
        horizon to ``t_f = N dt`` (waypoints must still fall inside it).
        """
        raw = copy.deepcopy(self.raw)
        solver = raw.setdefault("solver", {})
        if integrator is not None:
            solver["integrator"] = integrator
        if threads is not None:
            solver["threads"] = int(threads)
            solver["parallel"] = threads > 1
        if max_iterations is not None:
            solver["max_iterations"] = int(max_iterations)
        if convergence_threshold is not None:
            solver["convergence_threshold"] = float(convergence_threshold)
        if N is not None and keep_dt:
            raw["t_f"] = N * raw["dt"]
        elif N is not None:
            raw["dt"] = raw["t_f"] / N
        return parse_config(raw, self.source.parent if self.source else None, self.source)


def _load_model(raw: dict, base_dir: Path | None):
    if "model" in raw:
        spec = raw["model"]
        if not isinstance(spec, dict) or spec.get("type") != "linear":
            raise ConfigError("model", "inline models must have type 'linear'")
        try:
            A = np.array(spec["A"], dtype=float)
            B = np.array(spec["B"], dtype=float)
            system = LinearSystem(A, B)
        except (KeyError, ValueError) as exc:
            raise ConfigError("model", str(exc)) from None
        n, m = system.n_states, system.n_inputs
        states = spec.get("state_names", [f"x{i}" for i in range(n)])
        inputs = spec.get("input_names", [f"u{i}" for i in range(m)])
        if len(states) != n:
            raise ConfigError("model.state_names", f"expected {n} names")
        if len(inputs) != m:
            raise ConfigError("model.input_names", f"expected {m} names")
        return system, None, list(states), list(inputs), json.dumps(spec, sort_keys=True)
    if "model_file" not in raw:
        raise ConfigError("model_file", "missing (or give an inline linear 'model')")
    name = raw["model_file"]
    candidates = [Path(name)] if Path(name).is_absolute() else []
    if base_dir is not None:
        candidates.append(base_dir / name)
    candidates.append(bundled_dir("models") / name)
    path = next((c for c in candidates if c.exists()), None)
    if path is None:
        raise ConfigError("model_file", f"file {name!r} not found")
    text = path.read_text()
    try:
        model = RigidBodyModel.from_dict(json.loads(text))
    except (ModelError, ValueError) as exc:
        raise ConfigError("model_file", f"{name}: {exc}") from None
    contact = _contact(raw.get("contact"))
    plane = _plane(raw.get("plane"))
    system = RigidBodySystem(model, contact, plane)
    inputs = [f"u_{j}" for j in model.actuated_joints]
    return system, model, model.state_names(), inputs, text


_TOP_FIELDS = ("name", "description", "model_file", "model", "t_f", "dt", "initial_state", "cost", "contact",
               "plane", "solver", "init_controller", "tracking", "metrics")


def parse_config(raw: dict, base_dir: Path | None = None, source: Path | None = None) -> TaskConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    _check_keys(raw, _TOP_FIELDS, "")
    system, model, state_names, input_names, model_text = _load_model(raw, base_dir)
    n, m = len(state_names), len(input_names)
    t_f = _number(raw.get("t_f"), "t_f", positive=True)
    dt = _number(raw.get("dt"), "dt", positive=True)
    ratio = t_f / dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("dt", f"t_f / dt = {ratio} is not an integer")
    default = model.default_state if model is not None else np.zeros(n)
    x0 = _vector(raw.get("initial_state"), state_names, "initial_state", base=default)

    cost_raw = raw.get("cost")
    if not isinstance(cost_raw, dict):
        raise ConfigError("cost", "missing or not a mapping")
    _check_keys(cost_raw, ("final_weights", "state_weights", "input_weights", "x_des", "u_des", "waypoints"), "cost")
    H = _weights(cost_raw.get("final_weights"), state_names, "cost.final_weights")
    Q = _weights(cost_raw.get("state_weights"), state_names, "cost.state_weights")
    if "input_weights" not in cost_raw:
        raise ConfigError("cost.input_weights", "missing (input weights must be positive definite)")
    R = _weights(cost_raw["input_weights"], input_names, "cost.input_weights")
    x_des = _vector(cost_raw.get("x_des"), state_names, "cost.x_des", base=x0)
    u_des = _vector(cost_raw.get("u_des"), input_names, "cost.u_des")
    waypoints = []
    for i, wp in enumerate(cost_raw.get("waypoints", [])):
        path = f"cost.waypoints[{i}]"
        if not isinstance(wp, dict):
            raise ConfigError(path, "expected a mapping")
        _check_keys(wp, ("name", "t", "rho", "weights", "state"), path)
        t_p = _number(wp.get("t"), f"{path}.t")
        if not 0 <= t_p <= t_f:
            raise ConfigError(f"{path}.t", "outside the horizon")
        rho = _number(wp.get("rho"), f"{path}.rho", positive=True)
        W = _weights(wp.get("weights"), state_names, f"{path}.weights")
        x_wp = _vector(wp.get("state"), state_names, f"{path}.state", base=x0)
        waypoints.append(WaypointTerm(t_p, rho, W, x_wp, wp.get("name", f"waypoint{i}")))
    angle_idx = model.angle_indices() if model is not None else []
    try:
        cost = CostSpec(H, Q, R, x_des, u_des, tuple(waypoints), angle_idx)
    except ValueError as exc:
        raise ConfigError("cost", str(exc)) from None

    contact = system.contact if model is not None else _contact(raw.get("contact"))
    plane = system.ground if model is not None else _plane(raw.get("plane"))
    solver = _solver(raw.get("solver"), dt)
    init = raw.get("init_controller", {})
    if not isinstance(init, dict) or init.get("type", "pd_hold") not in ("pd_hold", "zero"):
        raise ConfigError("init_controller.type", "expected 'pd_hold' or 'zero'")
    tracking = _tracking(raw.get("tracking"), model) if raw.get("tracking") is not None else None
    return TaskConfig(
        name=str(raw.get("name", source.stem if source else "task")),
        description=str(raw.get("description", "")),
        system=system, model=model, t_f=t_f, dt=dt, initial_state=x0, cost=cost,
        contact=contact, plane=plane, solver=solver, state_names=state_names, input_names=input_names,
        init_controller=init, tracking=tracking, metrics=dict(raw.get("metrics", {})),
        raw=copy.deepcopy(raw), source=source, model_text=model_text,
    )


def _tracking(spec, model) -> TrackingConfig:
    if model is None:
        raise ConfigError("tracking", "closed-loop tracking needs a rigid-body model")
    if not isinstance(spec, dict):
        raise ConfigError("tracking", "expected a mapping")
    _check_keys(spec, ("joint_kp", "joint_kd", "base_kp", "base_kd", "perturbations", "control_dt",
                       "sim_dt", "contact_threshold"), "tracking")
    joints = list(model.actuated_joints)
    base = model.position_names()[: model.n_base]
    kp = _vector(spec.get("joint_kp", list(model.pd_kp)), joints, "tracking.joint_kp")
    kd = _vector(spec.get("joint_kd", list(model.pd_kd)), joints, "tracking.joint_kd")
    P = _weights(spec.get("base_kp"), base, "tracking.base_kp")
    D = _weights(spec.get("base_kd"), base, "tracking.base_kd")
    try:
        gains = TrackingGains(kp, kd, P, D)
    except ValueError as exc:
        raise ConfigError("tracking", str(exc)) from None
    perts = []
    for i, p in enumerate(spec.get("perturbations", [{}])):
        path = f"tracking.perturbations[{i}]"
        if not isinstance(p, dict):
            raise ConfigError(path, "expected a mapping")
        _check_keys(p, ("mass_scale", "contact_param_scale", "initial_state_offset", "torque_noise_std"), path)
        offset = p.get("initial_state_offset")
        try:
            perts.append(PlantPerturbation(
                mass_scale=_number(p.get("mass_scale", 1.0), f"{path}.mass_scale"),
                contact_param_scale=_number(p.get("contact_param_scale", 1.0), f"{path}.contact_param_scale"),
                initial_state_offset=None if offset is None else _vector(offset, model.state_names(),
                                                                         f"{path}.initial_state_offset"),
                torque_noise_std=_number(p.get("torque_noise_std", 0.0), f"{path}.torque_noise_std"),
            ))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(path, str(exc)) from None
    thr = spec.get("contact_threshold")
    return TrackingConfig(
        gains, perts,
        control_dt=_number(spec.get("control_dt", 0.005), "tracking.control_dt", positive=True),
        contact_threshold=None if thr is None else _number(thr, "tracking.contact_threshold", nonneg=True),
        sim_dt=None if spec.get("sim_dt") is None else _number(spec["sim_dt"], "tracking.sim_dt", positive=True),
    )


def load_config(path) -> TaskConfig:
    path = resolve_task(path)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, Path(path).parent, Path(path))
