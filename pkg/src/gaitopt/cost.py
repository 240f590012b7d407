"""Quadratic trajectory cost with Gaussian-windowed waypoint terms.

    J = xb(T)' H xb(T) + sum_k [xb' Q xb + ub' R ub + sum_p w_p(t_k) xh_p' W_p xh_p] dt

where ``xb = x - x_des``, ``ub = u - u_des`` and ``xh_p = x - x_wp`` for each
waypoint.  Differences of base orientation angles are wrapped to (-pi, pi].
The window ``w_p(t) = sqrt(rho/2pi) exp(-rho/2 (t - t_p)^2)`` integrates to
one, so ``W_p`` is the total weight the waypoint carries regardless of how
sharp the window is.

Quadratization stores the expansion with a factor 1/2 on the Hessians
(``l + q'dx + 1/2 dx'Q dx + ...``), which is the form the backward pass uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Trajectory

WINDOW_CUTOFF = 6.0


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def gaussian_window(t, t_p: float, rho: float):
    """Normalized temporal window, truncated to zero beyond 6 standard deviations."""
    t = np.asarray(t, dtype=float)
    d = t - t_p
    w = np.sqrt(rho / (2.0 * np.pi)) * np.exp(-0.5 * rho * d * d)
    return np.where(np.abs(d) > WINDOW_CUTOFF / np.sqrt(rho), 0.0, w)


def _check_psd(name: str, M: np.ndarray, strict: bool = False):
    if not np.allclose(M, M.T, atol=1e-12 * (1 + np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(M).min() if M.size else 0.0
    scale = 1e-12 * (1 + np.abs(M).max())
    if strict and lo <= 0:
        raise ValueError(f"{name} must be positive definite")
    if lo < -scale:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class WaypointTerm:
    t_p: float
    rho: float
    W: np.ndarray
    x_wp: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("waypoint rho must be positive")
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = np.diag(W)
        _check_psd("waypoint W", W)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "x_wp", np.asarray(self.x_wp, dtype=float))

    def window(self, t):
        return gaussian_window(t, self.t_p, self.rho)


@dataclass(frozen=True)
class CostSpec:
    """Weights and references.  ``x_des`` may be constant (n,) or per knot (N+1, n)."""

    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x_des: np.ndarray
    u_des: np.ndarray | None = None
    waypoints: tuple = ()
    angle_indices: tuple = ()

    def __post_init__(self):
        mats = {}
        for name in ("H", "Q", "R"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.ndim == 1:
                M = np.diag(M)
            mats[name] = M
        n, m = mats["Q"].shape[0], mats["R"].shape[0]
        if mats["H"].shape != (n, n) or mats["Q"].shape != (n, n) or mats["R"].shape != (m, m):
            raise ValueError("cost weight dimensions are inconsistent")
        _check_psd("H", mats["H"])
        _check_psd("Q", mats["Q"])
        _check_psd("R", mats["R"], strict=True)
        x_des = np.asarray(self.x_des, dtype=float)
        if x_des.shape[-1] != n:
            raise ValueError(f"x_des must have {n} entries per knot")
        u_des = np.zeros(m) if self.u_des is None else np.asarray(self.u_des, dtype=float)
        if u_des.shape[-1] != m:
            raise ValueError(f"u_des must have {m} entries per step")
        for wp in self.waypoints:
            if wp.W.shape != (n, n) or wp.x_wp.shape != (n,):
                raise ValueError(f"waypoint {wp.name or wp.t_p}: dimension mismatch")
        for name, value in mats.items():
            object.__setattr__(self, name, value)
        object.__setattr__(self, "x_des", x_des)
        object.__setattr__(self, "u_des", u_des)
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "angle_indices", tuple(int(i) for i in self.angle_indices))

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.R.shape[0]

    def scaled(self, c: float) -> "CostSpec":
        """Copy with every weight multiplied by ``c``."""
        wps = tuple(replace(w, W=c * w.W) for w in self.waypoints)
        return replace(self, H=c * self.H, Q=c * self.Q, R=c * self.R, waypoints=wps)

    # -- deviations --------------------------------------------------------

    def _wrap(self, d: np.ndarray) -> np.ndarray:
        if self.angle_indices:
            idx = list(self.angle_indices)
            d = d.copy()
            d[..., idx] = wrap_angle(d[..., idx])
        return d

    def state_deviation(self, states: np.ndarray) -> np.ndarray:
        return self._wrap(states - self.x_des)

    def input_deviation(self, inputs: np.ndarray) -> np.ndarray:
        u_des = self.u_des
        if u_des.ndim == 2:
            u_des = u_des[: inputs.shape[0]]
        return inputs - u_des

    def window_weights(self, times: np.ndarray) -> np.ndarray:
        """Window value of every waypoint at every time (n_waypoints, len(times))."""
        if not self.waypoints:
            return np.zeros((0, len(times)))
        return np.stack([w.window(times) for w in self.waypoints])


def _check_traj(cost: CostSpec, traj: Trajectory):
    if traj.states.shape[1] != cost.n_states or traj.inputs.shape[1] != cost.n_inputs:
        raise ValueError(
            f"trajectory dimensions ({traj.states.shape[1]}, {traj.inputs.shape[1]}) do not match "
            f"cost ({cost.n_states}, {cost.n_inputs})"
        )
    if cost.x_des.ndim == 2 and cost.x_des.shape[0] != traj.N + 1:
        raise ValueError("per-knot x_des length does not match the trajectory")


def running_costs(cost: CostSpec, traj: Trajectory) -> dict:
    """Per-step cost contributions (already multiplied by dt) and the final cost."""
    _check_traj(cost, traj)
    N, dt = traj.N, traj.dt
    xb = cost.state_deviation(traj.states)
    ub = cost.input_deviation(traj.inputs)
    state = np.einsum("ki,ij,kj->k", xb[:N], cost.Q, xb[:N]) * dt
    inp = np.einsum("ki,ij,kj->k", ub, cost.R, ub) * dt
    wp = np.zeros(N)
    times = traj.times[:N]
    for w, win in zip(cost.waypoints, cost.window_weights(times)):
        active = win > 0
        if np.any(active):
            xh = cost._wrap(traj.states[:N][active] - w.x_wp)
            wp[active] += win[active] * np.einsum("ki,ij,kj->k", xh, w.W, xh) * dt
    final = float(xb[N] @ cost.H @ xb[N])
    return {"state": state, "input": inp, "waypoint": wp, "final": final}


def evaluate(cost: CostSpec, traj: Trajectory) -> float:
    parts = running_costs(cost, traj)
    return float(parts["state"].sum() + parts["input"].sum() + parts["waypoint"].sum() + parts["final"])


@dataclass
class QuadraticCost:
    """Second-order expansion along a trajectory: per step and final slice."""

    q: np.ndarray          # (N,)
    q_vec: np.ndarray      # (N, n)
    Q_mat: np.ndarray      # (N, n, n)
    r_vec: np.ndarray      # (N, m)
    R_mat: np.ndarray      # (N, m, m)
    p_final: float = 0.0
    p_vec_final: np.ndarray = field(default=None)
    P_final: np.ndarray = field(default=None)

    def predict(self, dx: np.ndarray, du: np.ndarray) -> float:
        """Model change in cost for perturbations dx (N+1, n) and du (N, m)."""
        N = self.q.shape[0]
        d = np.einsum("ki,ki->", self.q_vec, dx[:N])
        d += 0.5 * np.einsum("ki,kij,kj->", dx[:N], self.Q_mat, dx[:N])
        d += np.einsum("ki,ki->", self.r_vec, du)
        d += 0.5 * np.einsum("ki,kij,kj->", du, self.R_mat, du)
        d += self.p_vec_final @ dx[N] + 0.5 * dx[N] @ self.P_final @ dx[N]
        return float(d)


def quadratize(cost: CostSpec, traj: Trajectory) -> QuadraticCost:
    _check_traj(cost, traj)
    N, dt = traj.N, traj.dt
    n = cost.n_states
    xb = cost.state_deviation(traj.states)
    ub = cost.input_deviation(traj.inputs)
    parts = running_costs(cost, traj)
    q = parts["state"] + parts["input"] + parts["waypoint"]
    grad = xb[:N] @ cost.Q.T
    hess = np.broadcast_to(cost.Q, (N, n, n)).copy()
    times = traj.times[:N]
    for w, win in zip(cost.waypoints, cost.window_weights(times)):
        active = np.nonzero(win > 0)[0]
        if active.size:
            xh = cost._wrap(traj.states[active] - w.x_wp)
            grad[active] += win[active, None] * (xh @ w.W.T)
            hess[active] += win[active, None, None] * w.W
    m = cost.n_inputs
    return QuadraticCost(
        q=q,
        q_vec=2.0 * dt * grad,
        Q_mat=2.0 * dt * hess,
        r_vec=2.0 * dt * ub @ cost.R.T,
        R_mat=np.broadcast_to(2.0 * dt * cost.R, (N, m, m)).copy(),
        p_final=parts["final"],
        p_vec_final=2.0 * cost.H @ xb[N],
        P_final=2.0 * cost.H,
    )
