"""System interface, integrators, trajectories and linearization.

A system exposes continuous dynamics ``xdot = f(x, u; h)`` where ``h`` is a
hidden per-foot contact state that is held constant during a step (and
during differentiation) and updated only after the step completes.  Systems
without contacts carry an empty hidden array.

Generic implementations of ``step``, ``rollout`` and ``linearize`` live on
:class:`System`; rigid-body systems override them with compiled versions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTEGRATORS = ("euler", "rk4")


class DynamicsError(RuntimeError):
    """Raised when a rollout produces non-finite states or hits a singularity."""

    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index


class GimbalLockError(DynamicsError):
    """Base pitch reached the Euler-angle singularity."""


@dataclass(frozen=True)
class IntegratorChoice:
    """Integration scheme and fixed step size."""

    method: str = "rk4"
    dt: float = 0.004

    def __post_init__(self):
        if self.method not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.method!r}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("dt must be a positive finite number")

    @property
    def code(self) -> int:
        return INTEGRATORS.index(self.method)


@dataclass
class Trajectory:
    """States at N+1 knots, inputs on N intervals, hidden contact state per knot."""

    dt: float
    states: np.ndarray
    inputs: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("need one more state than inputs")
        if self.hidden is None:
            self.hidden = np.zeros((self.states.shape[0], 0, 4))

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def copy(self) -> "Trajectory":
        return Trajectory(self.dt, self.states.copy(), self.inputs.copy(), self.hidden.copy())


@dataclass
class LinearizedDynamics:
    """Discrete-time Jacobians ``x[k+1] ~ A[k] dx[k] + B[k] du[k]``."""

    A: np.ndarray
    B: np.ndarray


@dataclass
class AffineController:
    """Time-varying affine law ``u = u_ff + alpha * l + K (x - x_ref)``.

    Legged systems may add ``K_anchor`` feedback on the tangential deviation
    of the contact anchors from ``hidden_ref``; only their rollout uses it.
    """

    u_ff: np.ndarray
    K: np.ndarray
    x_ref: np.ndarray
    l: np.ndarray = field(default=None)
    K_anchor: np.ndarray = field(default=None)
    hidden_ref: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u_ff = np.asarray(self.u_ff, dtype=float)
        self.K = np.asarray(self.K, dtype=float)
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        if self.l is None:
            self.l = np.zeros_like(self.u_ff)
        N = self.u_ff.shape[0]
        if self.K.shape[0] != N or self.x_ref.shape[0] < N or self.l.shape != self.u_ff.shape:
            raise ValueError("controller arrays must share the horizon length")

    @property
    def N(self) -> int:
        return self.u_ff.shape[0]

    @classmethod
    def open_loop(cls, inputs, n_states: int) -> "AffineController":
        inputs = np.asarray(inputs, dtype=float)
        N, m = inputs.shape
        return cls(inputs, np.zeros((N, m, n_states)), np.zeros((N + 1, n_states)))

    def __call__(self, k: int, x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
        return self.u_ff[k] + alpha * self.l[k] + self.K[k] @ (x - self.x_ref[k])


class System:
    """Base class: subclasses provide ``derivative`` and optionally analytic Jacobians."""

    n_states: int = 0
    n_inputs: int = 0
    n_feet: int = 0

    # -- to be provided by subclasses -------------------------------------

    def derivative(self, x, u, hidden=None) -> np.ndarray:
        raise NotImplementedError

    def continuous_jacobians(self, x, u, hidden=None):
        """Central-difference Jacobians; override when analytic ones exist."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        A = np.zeros((self.n_states, self.n_states))
        B = np.zeros((self.n_states, self.n_inputs))
        for j in range(self.n_states):
            h = max(1e-6, 1e-6 * abs(x[j]))
            e = np.zeros_like(x)
            e[j] = h
            A[:, j] = (self.derivative(x + e, u, hidden) - self.derivative(x - e, u, hidden)) / (2 * h)
        for j in range(self.n_inputs):
            h = max(1e-6, 1e-6 * abs(u[j]))
            e = np.zeros_like(u)
            e[j] = h
            B[:, j] = (self.derivative(x, u + e, hidden) - self.derivative(x, u - e, hidden)) / (2 * h)
        return A, B

    def angle_indices(self) -> list:
        """State indices that are angles to be wrapped when compared."""
        return []

    def initial_hidden(self, x) -> np.ndarray:
        return np.zeros((self.n_feet, 4))

    def update_hidden(self, hidden, x_next) -> np.ndarray:
        return hidden

    def check_state(self, x) -> None:
        """Raise ``GimbalLockError`` for singular configurations."""

    # -- generic integration ---------------------------------------------

    def integrate(self, x, u, hidden, integrator: IntegratorChoice) -> np.ndarray:
        dt = integrator.dt
        f = self.derivative
        if integrator.method == "euler":
            return x + dt * f(x, u, hidden)
        k1 = f(x, u, hidden)
        k2 = f(x + 0.5 * dt * k1, u, hidden)
        k3 = f(x + 0.5 * dt * k2, u, hidden)
        k4 = f(x + dt * k3, u, hidden)
        return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def step(self, x, u, hidden, integrator: IntegratorChoice):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if hidden is None:
            hidden = self.initial_hidden(x)
        self.check_state(x)
        x_next = self.integrate(x, u, hidden, integrator)
        if not np.all(np.isfinite(x_next)):
            raise DynamicsError("non-finite state after integration step")
        self.check_state(x_next)
        return x_next, self.update_hidden(hidden, x_next)

    def rollout(self, controller: AffineController, x0, integrator: IntegratorChoice,
                alpha: float = 1.0, hidden0=None) -> Trajectory:
        N = controller.N
        x0 = np.asarray(x0, dtype=float)
        hidden0 = self.initial_hidden(x0) if hidden0 is None else np.asarray(hidden0, dtype=float)
        xs = np.zeros((N + 1, self.n_states))
        us = np.zeros((N, self.n_inputs))
        hs = np.zeros((N + 1,) + hidden0.shape)
        xs[0], hs[0] = x0, hidden0
        for k in range(N):
            us[k] = controller(k, xs[k], alpha)
            try:
                xs[k + 1], hs[k + 1] = self.step(xs[k], us[k], hs[k], integrator)
            except DynamicsError as exc:
                raise type(exc)(f"{exc} at step {k}", time_index=k) from None
        return Trajectory(integrator.dt, xs, us, hs)

    def discrete_jacobians(self, x, u, hidden, integrator: IntegratorChoice):
        """Jacobians of one step of the chosen integrator (hidden state frozen)."""
        dt = integrator.dt
        n = self.n_states
        I = np.eye(n)
        A1, B1 = self.continuous_jacobians(x, u, hidden)
        if integrator.method == "euler":
            return I + dt * A1, dt * B1
        k1 = self.derivative(x, u, hidden)
        x2 = x + 0.5 * dt * k1
        A2, B2 = self.continuous_jacobians(x2, u, hidden)
        k2 = self.derivative(x2, u, hidden)
        x3 = x + 0.5 * dt * k2
        A3, B3 = self.continuous_jacobians(x3, u, hidden)
        k3 = self.derivative(x3, u, hidden)
        A4, B4 = self.continuous_jacobians(x + dt * k3, u, hidden)
        d2x = A2 @ (I + 0.5 * dt * A1)
        d2u = A2 @ (0.5 * dt * B1) + B2
        d3x = A3 @ (I + 0.5 * dt * d2x)
        d3u = A3 @ (0.5 * dt * d2u) + B3
        d4x = A4 @ (I + dt * d3x)
        d4u = A4 @ (dt * d3u) + B4
        return (I + dt / 6.0 * (A1 + 2 * d2x + 2 * d3x + d4x),
                dt / 6.0 * (B1 + 2 * d2u + 2 * d3u + d4u))

    def linearize(self, trajectory: Trajectory, integrator: IntegratorChoice) -> LinearizedDynamics:
        N = trajectory.N
        A = np.zeros((N, self.n_states, self.n_states))
        B = np.zeros((N, self.n_states, self.n_inputs))
        for k in range(N):
            A[k], B[k] = self.discrete_jacobians(
                trajectory.states[k], trajectory.inputs[k], trajectory.hidden[k], integrator
            )
        check_jacobians(A, B)
        return LinearizedDynamics(A, B)

    def contact_forces(self, trajectory: Trajectory) -> np.ndarray:
        """Per-knot contact forces (N+1, n_feet, 3); zero for contact-free systems."""
        return np.zeros((trajectory.N + 1, self.n_feet, 3))


class LinearSystem(System):
    """Continuous LTI system ``xdot = A x + B u``."""

    def __init__(self, A, B):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.n_states, self.n_inputs = self.B.shape
        if self.A.shape != (self.n_states, self.n_states):
            raise ValueError("A must be square and match B")

    def derivative(self, x, u, hidden=None):
        return self.A @ x + self.B @ u

    def continuous_jacobians(self, x, u, hidden=None):
        return self.A.copy(), self.B.copy()


def check_jacobians(A: np.ndarray, B: np.ndarray) -> None:
    """Raise ``DynamicsError`` naming the first step and coordinate with a non-finite entry."""
    for name, M in (("A", A), ("B", B)):
        bad = np.argwhere(~np.isfinite(M))
        if bad.size:
            k, i, j = (int(v) for v in bad[0])
            raise DynamicsError(f"non-finite {name}[{i},{j}] at step {k}", time_index=k)


def step(system: System, x, u, hidden, integrator: IntegratorChoice):
    return system.step(x, u, hidden, integrator)


def rollout(system: System, controller: AffineController, x0, integrator: IntegratorChoice,
            alpha: float = 1.0, hidden0=None) -> Trajectory:
    return system.rollout(controller, x0, integrator, alpha=alpha, hidden0=hidden0)


def linearize(system: System, trajectory: Trajectory, integrator: IntegratorChoice) -> LinearizedDynamics:
    return system.linearize(trajectory, integrator)
