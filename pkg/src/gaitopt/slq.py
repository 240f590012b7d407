"""Sequential linear-quadratic (SLQ) trajectory optimization.

Each iteration rolls out the current affine control law, linearizes the
dynamics and quadratizes the cost along the result, solves the Riccati-like
backward recursion for a feedback gain ``K`` and a feedforward increment
``l``, and line-searches the step size ``alpha`` on the true nonlinear
rollout ``u = u_n + alpha l + K (x - x_n)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CostSpec, QuadraticCost, evaluate, quadratize
from .dynamics import AffineController, DynamicsError, IntegratorChoice, LinearizedDynamics, System, Trajectory

log = logging.getLogger(__name__)

PHASES = ("rollout", "linearize", "quadratize", "backward_pass", "line_search")


class BackwardPassError(RuntimeError):
    def __init__(self, message: str, time_index: int, iteration: int | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.iteration = iteration


class InitialRolloutError(RuntimeError):
    """The initial controller does not produce a finite rollout."""


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 50
    alpha_d: float = 2.0
    max_line_search_steps: int = 10
    convergence_threshold: float = 1e-4
    integrator: IntegratorChoice = field(default_factory=IntegratorChoice)
    regularization_epsilon: float = 1e-6
    parallel: bool = False
    threads: int = 1

    def __post_init__(self):
        if not self.alpha_d > 1:
            raise ValueError("alpha_d must be greater than 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be positive")
        if self.max_line_search_steps < 1:
            raise ValueError("max_line_search_steps must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    @property
    def dt(self) -> float:
        return self.integrator.dt


@dataclass
class ValueFunction:
    """Quadratic value model ``s + p'dx + 1/2 dx'P dx`` at every knot."""

    P: np.ndarray
    p: np.ndarray
    s: np.ndarray


@dataclass
class BackwardPassResult:
    K: np.ndarray
    l: np.ndarray
    value: ValueFunction
    regularized_steps: int = 0
    expected_linear: float = 0.0     # sum l'g
    expected_quadratic: float = 0.0  # sum l'H l


def backward_pass(lin: LinearizedDynamics, quad: QuadraticCost, epsilon: float = 1e-6) -> BackwardPassResult:
    """Riccati-like recursion producing gains ``K`` and increments ``l``.

    The Hessian ``H = R + B'P B`` receives ``eps I`` when its smallest
    eigenvalue falls below ``eps = epsilon (1 + trace(R)/m)``.
    """
    A, B = lin.A, lin.B
    N, n, m = B.shape
    if A.shape[0] != N or quad.q.shape[0] != N:
        raise ValueError("linearization and cost expansion lengths differ")
    K = np.zeros((N, m, n))
    l = np.zeros((N, m))
    P = np.zeros((N + 1, n, n))
    p = np.zeros((N + 1, n))
    s = np.zeros(N + 1)
    P[N] = quad.P_final
    p[N] = quad.p_vec_final
    s[N] = quad.p_final
    regularized = 0
    lin_term = 0.0
    quad_term = 0.0
    for k in range(N - 1, -1, -1):
        At, Bt = A[k], B[k]
        Pn, pn = P[k + 1], p[k + 1]
        PB = Pn @ Bt
        H = quad.R_mat[k] + Bt.T @ PB
        G = PB.T @ At
        g = quad.r_vec[k] + Bt.T @ pn
        H = 0.5 * (H + H.T)
        eps = epsilon * (1.0 + np.trace(quad.R_mat[k]) / m)
        if np.linalg.eigvalsh(H)[0] < eps:
            H = H + eps * np.eye(m)
            regularized += 1
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise BackwardPassError(f"H not positive definite at step {k}", k) from None
        Kt = -_cho_solve(L, G)
        lt = -_cho_solve(L, g)
        HK = H @ Kt
        Pt = quad.Q_mat[k] + At.T @ Pn @ At + Kt.T @ HK + Kt.T @ G + G.T @ Kt
        P[k] = 0.5 * (Pt + Pt.T)
        p[k] = quad.q_vec[k] + At.T @ pn + Kt.T @ (H @ lt) + Kt.T @ g + G.T @ lt
        s[k] = quad.q[k] + s[k + 1] + 0.5 * lt @ H @ lt + lt @ g
        if not (np.all(np.isfinite(P[k])) and np.all(np.isfinite(p[k]))):
            raise BackwardPassError(f"non-finite value function at step {k}", k)
        K[k], l[k] = Kt, lt
        lin_term += lt @ g
        quad_term += lt @ H @ lt
    return BackwardPassResult(K, l, ValueFunction(P, p, s), regularized, float(lin_term), float(quad_term))


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


@dataclass
class LineSearchResult:
    trajectory: Trajectory | None
    alpha: float
    cost: float
    accepted: bool
    tried: list = field(default_factory=list)  # (alpha, cost or None when diverged)


def line_search(system: System, cost: CostSpec, nominal: Trajectory, K: np.ndarray, l: np.ndarray,
                settings: SolverSettings, previous_cost: float | None = None,
                K_anchor: np.ndarray | None = None) -> LineSearchResult:
    """Try ``alpha = 1, 1/alpha_d, ...`` and accept the first strict cost decrease."""
    if previous_cost is None:
        previous_cost = evaluate(cost, nominal)
    ctrl = AffineController(nominal.inputs, K, nominal.states, l=l, K_anchor=K_anchor,
                            hidden_ref=None if K_anchor is None else nominal.hidden)
    x0 = nominal.states[0]
    alpha = 1.0
    tried = []
    for _ in range(settings.max_line_search_steps):
        try:
            traj = system.rollout(ctrl, x0, settings.integrator, alpha=alpha, hidden0=nominal.hidden[0])
            J = evaluate(cost, traj)
        except DynamicsError:
            tried.append((alpha, None))
            alpha /= settings.alpha_d
            continue
        tried.append((alpha, J))
        if np.isfinite(J) and J < previous_cost:
            return LineSearchResult(traj, alpha, J, True, tried)
        alpha /= settings.alpha_d
    return LineSearchResult(None, 0.0, previous_cost, False, tried)


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    alpha: float
    max_ff_increment: float
    line_search_steps: int
    regularized_steps: int
    timing: dict

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "cost": self.cost,
            "alpha": self.alpha,
            "max_ff_increment": self.max_ff_increment,
            "line_search_steps": self.line_search_steps,
            "regularized_steps": self.regularized_steps,
            "timing": dict(self.timing),
        }


@dataclass
class SlqSolution:
    trajectory: Trajectory
    K: np.ndarray
    u_ff: np.ndarray
    l: np.ndarray
    cost_trace: list
    iterations_used: int
    converged: bool
    status: str
    records: list
    initial_trajectory: Trajectory
    K_anchor: np.ndarray | None = None

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]

    @property
    def controller(self) -> AffineController:
        """Time-varying LQR around the optimized trajectory."""
        return AffineController(self.u_ff, self.K, self.trajectory.states, K_anchor=self.K_anchor,
                                hidden_ref=None if self.K_anchor is None else self.trajectory.hidden)

    def timing_per_iteration(self) -> list:
        return [sum(r.timing.values()) for r in self.records]


def _pad_quadratic(quad: QuadraticCost, na: int) -> QuadraticCost:
    """Extend the state expansion with ``na`` unweighted coordinates."""
    N, n = quad.q_vec.shape
    Q = np.zeros((N, n + na, n + na))
    Q[:, :n, :n] = quad.Q_mat
    P = np.zeros((n + na, n + na))
    P[:n, :n] = quad.P_final
    return QuadraticCost(
        quad.q, np.pad(quad.q_vec, ((0, 0), (0, na))), Q, quad.r_vec, quad.R_mat,
        quad.p_final, np.pad(quad.p_vec_final, (0, na)), P,
    )


def _linearize(system: System, traj: Trajectory, settings: SolverSettings) -> LinearizedDynamics:
    if getattr(system, "n_anchor_states", 0):
        return system.linearize_augmented(traj, settings.integrator)
    if settings.parallel and settings.threads > 1 and hasattr(system, "linearize_parallel"):
        return system.linearize_parallel(traj, settings.integrator, settings.threads)
    return system.linearize(traj, settings.integrator)


def solve(system: System, cost: CostSpec, x0, init_controller: AffineController,
          settings: SolverSettings | None = None, callback=None) -> SlqSolution:
    """Run SLQ from the rollout of ``init_controller``.

    Terminates with status ``converged`` when ``max_t ||l(t)||_inf`` drops
    below the threshold, ``stalled`` when no step size lowers the cost, or
    ``max_iterations``.

    Systems exposing ``n_anchor_states > 0`` are linearized with their
    contact anchors as extra states; the resulting anchor feedback is part
    of the line-search rollout and of ``SlqSolution.K_anchor``.
    """
    settings = settings or SolverSettings()
    x0 = np.asarray(x0, dtype=float)
    t0 = time.perf_counter()
    try:
        nominal = system.rollout(init_controller, x0, settings.integrator)
    except DynamicsError as exc:
        raise InitialRolloutError(f"initial controller diverges: {exc}") from exc
    first_rollout = time.perf_counter() - t0
    J = evaluate(cost, nominal)
    if not np.isfinite(J):
        raise InitialRolloutError("initial rollout has non-finite cost")
    initial = nominal
    N, n, m = nominal.N, system.n_states, system.n_inputs
    K = np.asarray(init_controller.K, dtype=float).copy()
    K_anchor = None
    na = int(getattr(system, "n_anchor_states", 0))
    l = np.zeros((N, m))
    cost_trace = [J]
    records = []
    status = "max_iterations"
    accepted = 0
    pending_rollout = first_rollout
    for it in range(settings.max_iterations + 1):
        timing = dict.fromkeys(PHASES, 0.0)
        timing["rollout"] = pending_rollout
        t = time.perf_counter()
        lin = _linearize(system, nominal, settings)
        timing["linearize"] = time.perf_counter() - t
        t = time.perf_counter()
        quad = quadratize(cost, nominal)
        if na:
            quad = _pad_quadratic(quad, na)
        timing["quadratize"] = time.perf_counter() - t
        t = time.perf_counter()
        try:
            bp = backward_pass(lin, quad, settings.regularization_epsilon)
        except BackwardPassError as exc:
            exc.iteration = it
            raise
        timing["backward_pass"] = time.perf_counter() - t
        K, l = bp.K[:, :, :n], bp.l
        if na:
            K_anchor = bp.K[:, :, n:]
        max_l = float(np.abs(l).max()) if l.size else 0.0
        if max_l < settings.convergence_threshold:
            status = "converged"
            records.append(IterationRecord(it, J, 0.0, max_l, 0, bp.regularized_steps, timing))
            break
        if it == settings.max_iterations:
            records.append(IterationRecord(it, J, 0.0, max_l, 0, bp.regularized_steps, timing))
            break
        t = time.perf_counter()
        ls = line_search(system, cost, nominal, K, l, settings, J, K_anchor)
        timing["line_search"] = time.perf_counter() - t
        pending_rollout = 0.0  # the accepted line-search rollout is the next nominal
        records.append(IterationRecord(it, ls.cost, ls.alpha, max_l, len(ls.tried), bp.regularized_steps, timing))
        if callback is not None:
            callback(records[-1])
        if not ls.accepted:
            status = "stalled"
            break
        accepted += 1
        nominal = ls.trajectory
        J = ls.cost
        cost_trace.append(J)
        log.info("iteration %d: cost %.6g alpha %.4g max|l| %.3g", it, J, ls.alpha, max_l)
    return SlqSolution(
        trajectory=nominal,
        K=K,
        u_ff=nominal.inputs.copy(),
        l=l,
        cost_trace=cost_trace,
        iterations_used=accepted,
        converged=status == "converged",
        status=status,
        records=records,
        initial_trajectory=initial,
        K_anchor=K_anchor,
    )
