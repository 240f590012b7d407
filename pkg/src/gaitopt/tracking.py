"""Closed-loop execution of an optimized motion on a (perturbed) simulated plant.

The command sent to the plant at every control tick is

    tau = u_ff(t) + joint PD + stance-leg torques realizing a virtual base wrench

The optimized time-varying gains are deliberately not used.  The base
controller is a PD law on base pose and twist (virtual springs and dampers
on the trunk, no gravity term); its wrench is distributed over the stance
feet by minimum-norm least squares and mapped to joint torques through the
stance-foot Jacobians.  Stance is detected by thresholding the normal
component of each foot's contact force, and the ground plane used for that
test is refitted to the last contact point of every foot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import GroundPlane
from .cost import wrap_angle
from .dynamics import DynamicsError
from .rigidbody import RigidBodySystem
from .rigidbody import algorithms as alg
from .rigidbody import kernels as K
from .slq import SlqSolution


class PlaneFitError(ValueError):
    """Too few or degenerate points for a plane fit."""


@dataclass(frozen=True)
class TrackingGains:
    joint_kp: np.ndarray
    joint_kd: np.ndarray
    P_x: np.ndarray
    D_x: np.ndarray

    def __post_init__(self):
        for name in ("joint_kp", "joint_kd", "P_x", "D_x"):
            v = np.asarray(getattr(self, name), dtype=float)
            if name in ("P_x", "D_x") and v.ndim == 1:
                v = np.diag(v)
            if np.any(v < 0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls, n_joints: int, n_base: int) -> "TrackingGains":
        return cls(np.zeros(n_joints), np.zeros(n_joints), np.zeros((n_base, n_base)), np.zeros((n_base, n_base)))


@dataclass(frozen=True)
class PlantPerturbation:
    mass_scale: float = 1.0
    contact_param_scale: float = 1.0
    initial_state_offset: np.ndarray | None = None
    torque_noise_std: float = 0.0

    def __post_init__(self):
        if not (self.mass_scale > 0 and self.contact_param_scale > 0):
            raise ValueError("perturbation scales must be positive")
        if self.torque_noise_std < 0:
            raise ValueError("torque_noise_std must be non-negative")

    def apply(self, system: RigidBodySystem) -> RigidBodySystem:
        model = system.model if self.mass_scale == 1.0 else system.model.scaled_masses(self.mass_scale)
        return RigidBodySystem(model, system.contact.scaled(self.contact_param_scale), system.ground)


def joint_pd(q_des, qd_des, q, qd, gains: TrackingGains) -> np.ndarray:
    return gains.joint_kp * (np.asarray(q_des) - q) + gains.joint_kd * (np.asarray(qd_des) - qd)


def base_virtual_model(pose_des, pose, twist_des, twist, P_x, D_x, n_angles: int | None = None) -> np.ndarray:
    """Base wrench from pose and twist errors.

    Poses are ordered ``[orientation angles, position]`` and twists
    ``[angular, linear]`` in the world frame; the wrench has the same
    ordering ``[torque, force]``.  Orientation errors are wrapped.
    """
    pose_des, pose = np.asarray(pose_des, dtype=float), np.asarray(pose, dtype=float)
    e = pose_des - pose
    na = (1 if len(e) == 3 else 3) if n_angles is None else n_angles
    e[:na] = wrap_angle(e[:na])
    return np.asarray(P_x) @ e + np.asarray(D_x) @ (np.asarray(twist_des) - np.asarray(twist))


def _wrench_matrix(positions: np.ndarray, p_cog: np.ndarray, planar: bool) -> np.ndarray:
    """Map stacked foot forces to the wrench ``[torque, force]`` about ``p_cog``."""
    cols = []
    for p in positions:
        r = p - p_cog
        skew = np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])
        cols.append(np.vstack([skew, np.eye(3)]))
    G = np.hstack(cols)
    if planar:
        rows = [1, 3, 5]  # torque about y, force x, force z
        keep = np.concatenate([[3 * i, 3 * i + 2] for i in range(len(positions))])
        return G[np.ix_(rows, keep)]
    return G


@dataclass
class ForceDistribution:
    forces: np.ndarray   # (n_stance, 3) ground reaction forces on the feet
    torques: np.ndarray  # joint torques
    residual: float
    ok: bool


def distribute_wrench(wrench, positions, p_cog, planar: bool = False):
    """Minimum-norm foot forces with sum f = F and sum (p - p_cog) x f = tau."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 0:
        return np.zeros((0, 3)), float(np.linalg.norm(wrench))
    G = _wrench_matrix(positions, np.asarray(p_cog, dtype=float), planar)
    sol, *_ = np.linalg.lstsq(G, np.asarray(wrench, dtype=float), rcond=None)
    residual = float(np.linalg.norm(G @ sol - wrench))
    if planar:
        forces = np.zeros((positions.shape[0], 3))
        forces[:, 0] = sol[0::2]
        forces[:, 2] = sol[1::2]
    else:
        forces = sol.reshape(-1, 3)
    return forces, residual


def wrench_to_torques(wrench, stance_feet: list, p_cog, model, planar: bool | None = None) -> ForceDistribution:
    """Joint torques making the ground push on the stance feet with the distributed forces.

    ``stance_feet`` holds :class:`FootKinematics` of the feet in stance.  The
    torques are ``-sum J_joint' f``, the statically required actuation for
    ground reaction forces ``f``.
    """
    planar = model.planar if planar is None else planar
    m = model.n_inputs
    if not stance_feet:
        return ForceDistribution(np.zeros((0, 3)), np.zeros(m), float(np.linalg.norm(wrench)), False)
    positions = np.array([fk.position for fk in stance_feet])
    forces, residual = distribute_wrench(wrench, positions, p_cog, planar)
    idx = model.actuated_position_indices()
    tau = np.zeros(m)
    for fk, f in zip(stance_feet, forces):
        tau -= fk.jacobian[:, idx].T @ f
    return ForceDistribution(forces, tau, residual, True)


def contact_detection(forces, normal, threshold: float) -> np.ndarray:
    return np.asarray(forces, dtype=float) @ np.asarray(normal, dtype=float) > threshold


def ground_plane_fit(points, planar: bool = False) -> GroundPlane:
    """Least-squares plane (line in the x-z plane when ``planar``) through contact points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if planar:
        if pts.shape[0] < 2:
            raise PlaneFitError("need at least two points for a line fit")
        xz = pts[:, [0, 2]]
        c = xz.mean(axis=0)
        _, s, vt = np.linalg.svd(xz - c)
        if s[0] < 1e-9:
            raise PlaneFitError("contact points coincide")
        d = vt[0]
        normal = np.array([-d[1], 0.0, d[0]])
        point = np.array([c[0], 0.0, c[1]])
    else:
        if pts.shape[0] < 3:
            raise PlaneFitError("need at least three points for a plane fit")
        c = pts.mean(axis=0)
        _, s, vt = np.linalg.svd(pts - c)
        if s[1] < 1e-9 * max(1.0, s[0]):
            raise PlaneFitError("contact points are collinear")
        normal = vt[2]
        point = c
    if normal[2] < 0:
        normal = -normal
    return GroundPlane(point, normal)


def base_pose_and_twist(model, x):
    """World-frame base pose ``[angles, position]`` and twist ``[angular, linear]``."""
    nv = model.nv
    q, nu = x[:nv], x[nv:]
    if model.floating_base == "spatial":
        R = K.rpy_matrix(q[0], q[1], q[2])
        return q[:6].copy(), np.concatenate([R @ nu[:3], R @ nu[3:6]])
    c, s = np.cos(q[0]), np.sin(q[0])
    return q[:3].copy(), np.array([nu[0], c * nu[1] + s * nu[2], -s * nu[1] + c * nu[2]])


@dataclass
class ExecutionLog:
    times: np.ndarray
    states: np.ndarray
    reference: np.ndarray
    tau_cmd: np.ndarray
    tau_ff: np.ndarray
    tau_fb: np.ndarray
    forces: np.ndarray
    stance: np.ndarray
    completed: bool = True
    failure_index: int | None = None
    planes: list = field(default_factory=list)

    def joint_errors(self, model) -> np.ndarray:
        idx = model.actuated_position_indices()
        return self.states[:, idx] - self.reference[:, idx]

    def base_errors(self, model) -> np.ndarray:
        nb = model.n_base
        e = self.states[:, :nb] - self.reference[:, :nb]
        na = 1 if nb == 3 else 3
        e[:, :na] = wrap_angle(e[:, :na])
        return e


def simulate_closed_loop(plant: RigidBodySystem, solution: SlqSolution, gains: TrackingGains,
                         perturbation: PlantPerturbation | None = None, control_dt: float = 0.005,
                         sim_dt: float | None = None, contact_threshold: float | None = None,
                         seed: int = 0, integrator: str = "rk4") -> ExecutionLog:
    """Execute ``solution`` on ``plant`` with feedforward plus the two feedback controllers.

    The plant integrates with ``sim_dt`` (default: the solution's dt when it
    divides ``control_dt``, else ``control_dt``); torques are held between
    control ticks.  The reference is linearly interpolated from the
    optimized trajectory and ``u_ff`` is sampled with a zero-order hold.
    """
    perturbation = perturbation or PlantPerturbation()
    plant = perturbation.apply(plant)
    model = plant.model
    ref = solution.trajectory
    dt_ref, N = ref.dt, ref.N
    t_f = N * dt_ref
    if sim_dt is None:
        ratio = control_dt / dt_ref
        sim_dt = dt_ref if abs(ratio - round(ratio)) < 1e-9 else control_dt
    substeps = int(round(control_dt / sim_dt))
    if substeps < 1 or abs(substeps * sim_dt - control_dt) > 1e-9:
        raise ValueError("control_dt must be a multiple of sim_dt")
    n_ticks = int(np.floor(t_f / control_dt + 1e-9))
    nv, m, nf = model.nv, model.n_inputs, model.n_feet
    if contact_threshold is None:
        # 5% of the standing weight carried per leg
        contact_threshold = 0.05 * model.total_mass * np.linalg.norm(model.gravity) / max(1, nf)
    rng = np.random.default_rng(seed)
    from .dynamics import IntegratorChoice

    integ = IntegratorChoice(integrator, sim_dt)
    times = np.arange(n_ticks + 1) * control_dt
    ref_states = np.stack([np.interp(times, ref.times, ref.states[:, i]) for i in range(model.n_states)], axis=1)
    x = ref.states[0].copy()
    if perturbation.initial_state_offset is not None:
        x = x + perturbation.initial_state_offset
    hidden = plant.initial_hidden(x)
    states = np.zeros((n_ticks + 1, model.n_states))
    states[0] = x
    tau_cmd = np.zeros((n_ticks, m))
    tau_ff = np.zeros((n_ticks, m))
    tau_fb = np.zeros((n_ticks, m))
    forces = np.zeros((n_ticks, nf, 3))
    stance = np.zeros((n_ticks, nf), dtype=bool)
    idx = model.actuated_position_indices()
    plane = GroundPlane.flat()
    last_contact = [None] * nf
    planes = [plane]
    planar = model.planar
    controller_active = np.any(gains.P_x) or np.any(gains.D_x)
    for c in range(n_ticks):
        t = times[c]
        k = min(int(np.floor(t / dt_ref + 1e-9)), N - 1)
        xr = ref_states[c]
        # sensing: contact forces and stance detection
        _, lam = plant.accelerations(x, np.zeros(m), hidden)
        forces[c] = lam
        stance[c] = contact_detection(lam, plane.normal, contact_threshold)
        q = x[:nv]
        feet = alg.foot_kinematics(model, q, x[nv:])
        for f in range(nf):
            if stance[c, f]:
                last_contact[f] = feet[f].position
        known = [p for p in last_contact if p is not None]
        if len(known) >= (2 if planar else 3):
            try:
                plane = ground_plane_fit(known, planar)
            except PlaneFitError:
                pass
        # controllers
        u_ff = solution.u_ff[k]
        fb = joint_pd(xr[idx], xr[nv + idx], q[idx], x[nv + idx], gains)
        if controller_active:
            pose_d, twist_d = base_pose_and_twist(model, xr)
            pose, twist = base_pose_and_twist(model, x)
            wrench = base_virtual_model(pose_d, pose, twist_d, twist, gains.P_x, gains.D_x)
            stance_feet = [fk for f, fk in enumerate(feet) if stance[c, f]]
            p_cog = alg.center_of_mass(model, q)
            fb = fb + wrench_to_torques(wrench, stance_feet, p_cog, model).torques
        tau = u_ff + fb
        if perturbation.torque_noise_std > 0:
            tau = tau + rng.normal(0.0, perturbation.torque_noise_std, m)
        tau_ff[c], tau_fb[c], tau_cmd[c] = u_ff, fb, tau
        try:
            for _ in range(substeps):
                x, hidden = plant.step(x, tau, hidden, integ)
        except DynamicsError:
            return ExecutionLog(times[: c + 1], states[: c + 1], ref_states[: c + 1], tau_cmd[: c + 1],
                                tau_ff[: c + 1], tau_fb[: c + 1], forces[: c + 1], stance[: c + 1],
                                completed=False, failure_index=c, planes=planes)
        states[c + 1] = x
        planes.append(plane)
    return ExecutionLog(times, states, ref_states, tau_cmd, tau_ff, tau_fb, forces, stance, planes=planes)
