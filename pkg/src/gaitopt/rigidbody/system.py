"""Legged rigid-body system with smooth ground contact."""

from __future__ import annotations

import numpy as np

from ..contact import ContactParams, GroundPlane
from ..dynamics import (
    AffineController,
    DynamicsError,
    GimbalLockError,
    IntegratorChoice,
    LinearizedDynamics,
    System,
    Trajectory,
    check_jacobians,
)
from . import kernels as K
from .algorithms import actuation_matrix, foot_kinematics, gravity_forces
from .model import RigidBodyModel


def _raise_status(status: int, index: int | None):
    where = "" if index is None else f" at step {index}"
    if status == K.STATUS_GIMBAL:
        raise GimbalLockError(f"base pitch within {K.GIMBAL_MARGIN} rad of +-pi/2{where}", time_index=index)
    raise DynamicsError(f"non-finite state{where}", time_index=index)


class RigidBodySystem(System):
    """Continuous dynamics ``M(q) nu_dot + h = S^T u + J_c^T lambda``.

    The state is ``[q, nu]``; the hidden state holds per-foot contact flags
    and anchors as an ``(n_feet, 4)`` array.
    """

    def __init__(self, model: RigidBodyModel, contact: ContactParams | None = None,
                 ground: GroundPlane | None = None):
        self.model = model
        self.contact = contact or ContactParams()
        self.ground = ground or GroundPlane.flat()
        self.n_states = model.n_states
        self.n_inputs = model.n_inputs
        self.n_feet = model.n_feet
        self._params = self.contact.as_array()

    @property
    def nv(self) -> int:
        return self.model.nv

    def _args(self):
        return self.ground.point, self.ground.normal, self._params

    def with_contact(self, contact: ContactParams) -> "RigidBodySystem":
        return RigidBodySystem(self.model, contact, self.ground)

    def angle_indices(self) -> list:
        return self.model.angle_indices()

    def check_state(self, x) -> None:
        if not K.gimbal_ok(self.model.packed[K.M_BTYPE], np.asarray(x, dtype=float)):
            _raise_status(K.STATUS_GIMBAL, None)

    def _hidden(self, hidden, x) -> np.ndarray:
        if hidden is None:
            return self.initial_hidden(x)
        return np.ascontiguousarray(hidden, dtype=float).reshape(self.n_feet, 4)

    def initial_hidden(self, x) -> np.ndarray:
        """Contacts already penetrating at ``x`` are anchored at their projection."""
        x = np.asarray(x, dtype=float)
        pos = K.feet_world(self.model.packed, x[: self.nv])
        return K.update_hidden(pos, np.zeros((self.n_feet, 4)), self.ground.point, self.ground.normal)

    def update_hidden(self, hidden, x_next, x_prev=None) -> np.ndarray:
        """Contact bookkeeping after a step; with ``x_prev`` new anchors sit at the plane crossing."""
        pos = K.feet_world(self.model.packed, np.asarray(x_next, dtype=float)[: self.nv])
        hidden = np.asarray(hidden, dtype=float)
        if x_prev is None:
            return K.update_hidden(pos, hidden, self.ground.point, self.ground.normal)
        prev = K.feet_world(self.model.packed, np.asarray(x_prev, dtype=float)[: self.nv])
        return K.update_hidden_crossing(prev, pos, hidden, self.ground.point, self.ground.normal)

    def derivative(self, x, u, hidden=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return K.derivative(self.model.packed, x, np.asarray(u, dtype=float), self._hidden(hidden, x), *self._args())

    def accelerations(self, x, u, hidden=None):
        """Generalized accelerations and per-foot contact forces."""
        x = np.asarray(x, dtype=float)
        return K.accelerations(self.model.packed, x, np.asarray(u, dtype=float), self._hidden(hidden, x), *self._args())

    def continuous_jacobians(self, x, u, hidden=None):
        x = np.asarray(x, dtype=float)
        A, B, _ = K.continuous_jacobians(
            self.model.packed, x, np.asarray(u, dtype=float), self._hidden(hidden, x), *self._args()
        )
        return A, B

    def step(self, x, u, hidden, integrator: IntegratorChoice):
        x = np.asarray(x, dtype=float)
        xn, hn, status = K.step(
            self.model.packed, x, np.asarray(u, dtype=float), self._hidden(hidden, x), *self._args(),
            integrator.dt, integrator.code,
        )
        if status != K.STATUS_OK:
            _raise_status(status, None)
        return xn, hn

    def rollout(self, controller: AffineController, x0, integrator: IntegratorChoice,
                alpha: float = 1.0, hidden0=None) -> Trajectory:
        x0 = np.asarray(x0, dtype=float)
        hidden0 = self._hidden(hidden0, x0)
        if controller.K_anchor is not None and controller.hidden_ref is not None:
            Ka = np.ascontiguousarray(controller.K_anchor, dtype=float)
            h_ref = np.ascontiguousarray(controller.hidden_ref, dtype=float)
        else:
            Ka = np.zeros((controller.N, self.n_inputs, 0))
            h_ref = np.zeros((controller.N + 1, self.n_feet, 4))
        xs, us, hs, status, idx = K.rollout(
            self.model.packed, x0, hidden0, controller.u_ff, controller.l, controller.K,
            controller.x_ref, Ka, h_ref, self.tangent_basis(), float(alpha), *self._args(),
            integrator.dt, integrator.code,
        )
        if status != K.STATUS_OK:
            _raise_status(status, int(idx))
        return Trajectory(integrator.dt, xs, us, hs)

    def discrete_jacobians(self, x, u, hidden, integrator: IntegratorChoice):
        x = np.asarray(x, dtype=float)
        return K.discrete_jacobians(
            self.model.packed, x, np.asarray(u, dtype=float), self._hidden(hidden, x), *self._args(),
            integrator.dt, integrator.code,
        )

    def linearize(self, trajectory: Trajectory, integrator: IntegratorChoice) -> LinearizedDynamics:
        A, B = K.linearize_trajectory(
            self.model.packed, trajectory.states, trajectory.inputs, trajectory.hidden,
            *self._args(), integrator.dt, integrator.code,
        )
        check_jacobians(A, B)
        return LinearizedDynamics(A, B)

    def tangent_basis(self) -> np.ndarray:
        """Columns spanning the plane directions an anchor can move in (3, nt)."""
        n = self.ground.normal
        if self.model.planar:
            t = np.array([n[2], 0.0, -n[0]])
            return (t / np.linalg.norm(t))[:, None]
        a = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(a, n)
        t1 /= np.linalg.norm(t1)
        return np.ascontiguousarray(np.stack([t1, np.cross(n, t1)], axis=1))

    @property
    def n_anchor_states(self) -> int:
        """Anchor coordinates appended to the linearized state.

        With a tangential contact spring the next state depends on where each
        foot touched down, which the plain state-space linearization treats
        as fixed.  Zero when the spring is off.
        """
        if self.contact.k_t <= 0.0 or self.n_feet == 0:
            return 0
        return self.n_feet * self.tangent_basis().shape[1]

    def linearize_augmented(self, trajectory: Trajectory, integrator: IntegratorChoice) -> LinearizedDynamics:
        """Step Jacobians of ``[x, anchor coordinates]`` along ``trajectory``."""
        A, B = K.augmented_linearization(
            self.model.packed, trajectory.states, trajectory.inputs, trajectory.hidden,
            *self._args(), integrator.dt, integrator.code, self.tangent_basis(),
        )
        check_jacobians(A, B)
        return LinearizedDynamics(A, B)

    def contact_forces(self, trajectory: Trajectory) -> np.ndarray:
        return K.trajectory_contact_forces(
            self.model.packed, trajectory.states, trajectory.hidden, *self._args()
        )

    def foot_positions(self, states) -> np.ndarray:
        """World foot positions for each row of ``states`` (T, n_feet, 3)."""
        states = np.atleast_2d(states)
        return np.stack([K.feet_world(self.model.packed, x[: self.nv]) for x in states])

    def static_torques(self, x) -> np.ndarray:
        """Joint torques balancing gravity at ``x`` with the feet currently on the ground.

        Solves ``S^T u + J_c^T lambda = g(q)`` in the least-squares,
        minimum-norm sense over ``(u, lambda)``.
        """
        m = self.model
        q = np.asarray(x, dtype=float)[: m.nv]
        g = gravity_forces(m, q)
        feet = foot_kinematics(m, q)
        cols = [actuation_matrix(m).T]
        for fk in feet:
            if self.ground.height_of(fk.position) < 1e-3:
                cols.append(fk.jacobian.T)
        z, *_ = np.linalg.lstsq(np.hstack(cols), g, rcond=None)
        return z[: m.n_inputs]

    def hold_controller(self, x_hold, N: int, gravity_compensation: bool = True) -> AffineController:
        """Joint PD hold written as an affine law around ``x_hold``."""
        m = self.model
        x_hold = np.asarray(x_hold, dtype=float).copy()
        x_hold[m.nv:] = 0.0
        u0 = self.static_torques(x_hold) if gravity_compensation else np.zeros(m.n_inputs)
        Kfb = np.zeros((m.n_inputs, m.n_states))
        idx = m.actuated_position_indices()
        kp = m.pd_kp if m.pd_kp is not None else np.zeros(m.n_inputs)
        kd = m.pd_kd if m.pd_kd is not None else np.zeros(m.n_inputs)
        Kfb[np.arange(m.n_inputs), idx] = -kp
        Kfb[np.arange(m.n_inputs), m.nv + idx] = -kd
        return AffineController(
            np.repeat(u0[None], N, axis=0), np.repeat(Kfb[None], N, axis=0), np.repeat(x_hold[None], N + 1, axis=0)
        )
