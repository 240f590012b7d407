"""Rigid-body dynamics algorithms on a :class:`RigidBodyModel`.

Thin wrappers over the compiled kernels: composite-rigid-body mass matrix,
recursive Newton-Euler bias and inverse dynamics, forward dynamics through a
Cholesky solve, and foot kinematics.  Generalized velocities use the body
frame twist of the base, so for floating-base models ``qd`` is not the time
derivative of ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .model import RigidBodyModel


class SingularMassMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class FootKinematics:
    name: str
    position: np.ndarray
    velocity: np.ndarray
    jacobian: np.ndarray


def _q(model: RigidBodyModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.nv,):
        raise ValueError(f"expected {model.nv} generalized positions, got shape {q.shape}")
    return q


def mass_matrix(model: RigidBodyModel, q) -> np.ndarray:
    q = _q(model, q)
    Xup, _, _ = K.kinematics(model.packed, q)
    return K.crba(model.packed, Xup, model.nv)


def bias_forces(model: RigidBodyModel, q, qd) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms ``h(q, qd)``."""
    return inverse_dynamics(model, q, qd, np.zeros(model.nv))


def gravity_forces(model: RigidBodyModel, q) -> np.ndarray:
    return inverse_dynamics(model, q, np.zeros(model.nv), np.zeros(model.nv))


def _foot_generalized(model, q, foot_forces) -> np.ndarray:
    lam = np.asarray(foot_forces, dtype=float).reshape(model.n_feet, 3)
    _, Rw, pw = K.kinematics(model.packed, q)
    _, J = K.foot_positions_jacobians(model.packed, Rw, pw, model.nv)
    return np.einsum("fij,fi->j", J, lam)


def inverse_dynamics(model: RigidBodyModel, q, qd, qdd, foot_forces=None, gravity: bool = True) -> np.ndarray:
    """Generalized forces ``M qdd + h`` minus the contribution of foot forces."""
    q = _q(model, q)
    Xup, _, _ = K.kinematics(model.packed, q)
    tau = K.rnea(
        model.packed, Xup, np.asarray(qd, dtype=float), np.asarray(qdd, dtype=float),
        bool(gravity), np.zeros((0, 6)),
    )
    if foot_forces is not None and model.n_feet:
        tau = tau - _foot_generalized(model, q, foot_forces)
    return tau


def forward_dynamics(model: RigidBodyModel, q, qd, tau, foot_forces=None) -> np.ndarray:
    """Solve ``M qdd = S^T tau + J^T lambda - h`` with a Cholesky factorization.

    ``tau`` holds either one torque per actuated joint or a full vector of
    generalized forces (length ``nv``).
    """
    q = _q(model, q)
    tau = np.asarray(tau, dtype=float)
    if tau.shape == (model.n_inputs,):
        tau = actuation_matrix(model).T @ tau
    elif tau.shape != (model.nv,):
        raise ValueError(f"tau must have {model.n_inputs} or {model.nv} entries, got shape {tau.shape}")
    rhs = tau - bias_forces(model, q, qd)
    if foot_forces is not None and model.n_feet:
        rhs = rhs + _foot_generalized(model, q, foot_forces)
    L, ok = K.cholesky(mass_matrix(model, q))
    if not ok:
        raise SingularMassMatrixError("mass matrix is not positive definite")
    return K.cho_solve(L, rhs)


def actuation_matrix(model: RigidBodyModel) -> np.ndarray:
    """Selection matrix S (n_inputs x nv) so that generalized input is S^T u."""
    S = np.zeros((model.n_inputs, model.nv))
    S[np.arange(model.n_inputs), model.actuated_position_indices()] = 1.0
    return S


def foot_kinematics(model: RigidBodyModel, q, qd=None) -> list:
    """World position, linear velocity and Jacobian of every foot."""
    q = _q(model, q)
    qd = np.zeros(model.nv) if qd is None else np.asarray(qd, dtype=float)
    _, Rw, pw = K.kinematics(model.packed, q)
    pos, J = K.foot_positions_jacobians(model.packed, Rw, pw, model.nv)
    return [
        FootKinematics(f.name, pos[i].copy(), J[i] @ qd, J[i].copy())
        for i, f in enumerate(model.feet)
    ]


def foot_positions(model: RigidBodyModel, q) -> np.ndarray:
    return K.feet_world(model.packed, _q(model, q))


def body_poses(model: RigidBodyModel, q):
    """World rotation and origin of every body, in packing order."""
    _, Rw, pw = K.kinematics(model.packed, _q(model, q))
    return Rw, pw


def kinetic_energy(model: RigidBodyModel, q, qd) -> float:
    qd = np.asarray(qd, dtype=float)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def center_of_mass(model: RigidBodyModel, q) -> np.ndarray:
    Rw, pw = body_poses(model, q)
    links = {l.name: l for l in model.links}
    names = ([model.links[0].name] if model.floating_base != "fixed" else []) + [j.child for j in model.joints]
    c = np.zeros(3)
    for b, n in enumerate(names):
        c += links[n].mass * (pw[b] + Rw[b] @ links[n].com)
    return c / model.total_mass


def pose_rates(model: RigidBodyModel, q, qd) -> np.ndarray:
    """Time derivative of the generalized positions."""
    out = np.empty(2 * model.nv)
    K.pose_rates(model.packed[K.M_BTYPE], _q(model, q), np.asarray(qd, dtype=float), out)
    return out[: model.nv]
