"""Smooth spring-damper ground contact.

Both the normal and the tangential force are shaped by the same
penetration profile: quadratic below the smoothing depth ``alpha_c`` and
linear (offset by ``alpha_c / 2``) beyond it, so force and force slope are
continuous at touchdown.  The tangential spring pulls the foot back to the
point where contact was established (the hidden anchor), and the friction
cone is enforced by clamping the tangential magnitude.

The scalar pieces are compiled (``gaitopt.rigidbody.kernels``); the
functions here are the readable, per-foot interface used by tests, the
tracking harness and the schedule analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .rigidbody import kernels as K


@dataclass(frozen=True)
class ContactParams:
    """Contact model parameters.

    Units: ``alpha_c`` m, ``k_n`` N/m, ``d_n`` damping gain multiplying the
    penetration rate, ``k_t`` and ``d_t`` tangential spring/damper gains,
    ``mu`` dimensionless.  Typical ranges: ``k_n`` 8e3..9e4,
    ``d_n`` 2e3..5e4, ``k_t`` 0..5e6, ``d_t`` 2e3..5e3, ``alpha_c`` 0.01.
    """

    alpha_c: float = 0.01
    k_n: float = 2.0e4
    d_n: float = 5.0e3
    k_t: float = 1.0e6
    d_t: float = 2.0e3
    mu: float = 0.8

    def __post_init__(self):
        if not self.alpha_c > 0:
            raise ValueError("alpha_c must be positive")
        for name in ("k_n", "d_n", "k_t", "d_t", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_c, self.k_n, self.d_n, self.k_t, self.d_t, self.mu])

    def scaled(self, normal_scale: float = 1.0) -> "ContactParams":
        """Copy with ``k_n`` and ``d_n`` multiplied by ``normal_scale``."""
        return ContactParams(
            self.alpha_c, self.k_n * normal_scale, self.d_n * normal_scale, self.k_t, self.d_t, self.mu
        )


@dataclass(frozen=True)
class GroundPlane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        point = np.asarray(self.point, dtype=float).reshape(3)
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(normal)
        if norm == 0 or not np.isfinite(norm):
            raise ValueError("ground normal must be a finite nonzero vector")
        normal = normal / norm
        if normal[2] <= 0:
            raise ValueError("ground normal must point upward")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "normal", normal)

    @classmethod
    def flat(cls, height: float = 0.0) -> "GroundPlane":
        return cls(np.array([0.0, 0.0, height]), np.array([0.0, 0.0, 1.0]))

    @classmethod
    def inclined(cls, angle: float, height: float = 0.0) -> "GroundPlane":
        """Plane rising along +x with slope ``tan(angle)``."""
        return cls(np.array([0.0, 0.0, height]), np.array([-np.sin(angle), 0.0, np.cos(angle)]))

    def project(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p - np.dot(p - self.point, self.normal) * self.normal

    def height_of(self, p: np.ndarray) -> float:
        """Signed distance of ``p`` above the plane."""
        return float(np.dot(np.asarray(p, dtype=float) - self.point, self.normal))


@dataclass(frozen=True)
class ContactState:
    """Per-foot hidden contact state: flag plus the anchor (world frame)."""

    in_contact: np.ndarray
    anchor: np.ndarray

    @classmethod
    def empty(cls, n_feet: int) -> "ContactState":
        return cls(np.zeros(n_feet, dtype=bool), np.zeros((n_feet, 3)))

    @classmethod
    def from_array(cls, hidden: np.ndarray) -> "ContactState":
        hidden = np.asarray(hidden, dtype=float).reshape(-1, 4)
        return cls(hidden[:, 0] > 0.5, hidden[:, 1:4].copy())

    def to_array(self) -> np.ndarray:
        out = np.zeros((len(self.in_contact), 4))
        out[:, 0] = self.in_contact
        out[:, 1:4] = np.where(self.in_contact[:, None], self.anchor, 0.0)
        return out


class Penetration(NamedTuple):
    depth: float
    rate: float
    tangential: np.ndarray
    tangential_rate: np.ndarray


def penetration(foot_position, foot_velocity, plane: GroundPlane, anchor=None) -> Penetration:
    """Depth below the plane (positive when penetrating) and its rate.

    The tangential offset is measured from ``anchor`` when given, otherwise
    from the foot's own projection (i.e. zero).
    """
    p = np.asarray(foot_position, dtype=float)
    v = np.asarray(foot_velocity, dtype=float)
    n = plane.normal
    depth = -float(np.dot(p - plane.point, n))
    rate = -float(np.dot(v, n))
    ref = plane.project(p) if anchor is None else np.asarray(anchor, dtype=float)
    d = p - ref
    tangential = d - np.dot(d, n) * n
    tangential_rate = v - np.dot(v, n) * n
    return Penetration(depth, rate, tangential, tangential_rate)


def normal_force(depth: float, rate: float, params: ContactParams, normal) -> np.ndarray:
    """Normal force vector; never pulls the foot into the ground."""
    mag = K.normal_force_magnitude(depth, rate, params.alpha_c, params.k_n, params.d_n)
    return mag * np.asarray(normal, dtype=float)


def tangential_force(tangential, tangential_rate, depth: float, rate: float, params: ContactParams) -> np.ndarray:
    """Restoring tangential spring-damper force before friction saturation.

    ``rate`` does not enter the tangential law; it is accepted so callers can
    pass a :class:`Penetration` unpacked.
    """
    del rate
    s = K.smoothing_scale(depth, params.alpha_c)
    pt = np.asarray(tangential, dtype=float)
    vt = np.asarray(tangential_rate, dtype=float)
    return -(params.k_t * pt + params.d_t * vt) * s


def friction_saturate(tangential, normal_vec, mu: float, normal=None) -> np.ndarray:
    """Clamp the tangential force to the friction cone, keeping its direction."""
    del normal
    ft = np.asarray(tangential, dtype=float)
    limit = mu * np.linalg.norm(normal_vec)
    mag = np.linalg.norm(ft)
    if mag <= limit:
        return ft.copy()
    if mag == 0.0:
        return np.zeros_like(ft)
    return ft * (limit / mag)


def update_contact_state(state: ContactState, foot_positions, plane: GroundPlane,
                         previous_positions=None) -> ContactState:
    """Register touchdowns and clear lift-offs.

    A new contact is anchored at the projected foot position, or, when the
    previous foot positions are given, at the point where the foot crossed
    the plane (linear interpolation between the two positions).
    """
    pos = np.asarray(foot_positions, dtype=float).reshape(-1, 3)
    if previous_positions is None:
        hidden = K.update_hidden(pos, state.to_array(), plane.point, plane.normal)
    else:
        prev = np.asarray(previous_positions, dtype=float).reshape(-1, 3)
        hidden = K.update_hidden_crossing(prev, pos, state.to_array(), plane.point, plane.normal)
    return ContactState.from_array(hidden)


def foot_force(foot_position, foot_velocity, in_contact: bool, anchor, plane: GroundPlane,
               params: ContactParams) -> np.ndarray:
    """Total contact force on one foot: normal plus saturated tangential."""
    pen = penetration(foot_position, foot_velocity, plane, anchor if in_contact else None)
    if pen.depth <= 0:
        return np.zeros(3)
    fn = normal_force(pen.depth, pen.rate, params, plane.normal)
    ft = tangential_force(pen.tangential, pen.tangential_rate, pen.depth, pen.rate, params)
    return fn + friction_saturate(ft, fn, params.mu, plane.normal)


def total_contact_force(feet, state: ContactState, plane: GroundPlane, params: ContactParams) -> np.ndarray:
    """Per-foot contact forces (n_feet x 3) from a list of foot kinematics."""
    out = np.zeros((len(feet), 3))
    for i, fk in enumerate(feet):
        out[i] = foot_force(fk.position, fk.velocity, bool(state.in_contact[i]), state.anchor[i], plane, params)
    return out
