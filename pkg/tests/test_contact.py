import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitopt.contact import (
    ContactParams,
    ContactState,
    GroundPlane,
    foot_force,
    friction_saturate,
    normal_force,
    penetration,
    tangential_force,
    total_contact_force,
    update_contact_state,
)
from gaitopt.dynamics import IntegratorChoice
from gaitopt.rigidbody import RigidBodySystem
from gaitopt.rigidbody import algorithms as alg
from gaitopt.rigidbody import kernels as K

FLAT = GroundPlane.flat()
UP = np.array([0.0, 0.0, 1.0])

table_params = st.builds(
    ContactParams,
    alpha_c=st.just(0.01),
    k_n=st.floats(8000, 90000),
    d_n=st.floats(2000, 50000),
    k_t=st.floats(0, 5e6),
    d_t=st.floats(2000, 5000),
    mu=st.floats(0, 1.5),
)


def test_params_validation():
    with pytest.raises(ValueError):
        ContactParams(alpha_c=0.0)
    with pytest.raises(ValueError):
        ContactParams(k_n=-1.0)


def test_ground_plane_validation():
    with pytest.raises(ValueError):
        GroundPlane([0, 0, 0], [1, 0, 0])
    plane = GroundPlane([0, 0, 0], [0, 0, 2])
    np.testing.assert_allclose(plane.normal, UP)


def test_penetration_sign_conventions():
    assert penetration([0, 0, 0.01], [0, 0, 0], FLAT).depth == pytest.approx(-0.01)
    pen = penetration([0.3, 0.1, 0.0], [0, 0, -0.1], FLAT)
    assert pen.depth == 0.0 and pen.rate == pytest.approx(0.1)


def test_inclined_plane_penetration():
    theta = 0.1
    plane = GroundPlane.inclined(theta)
    np.testing.assert_allclose(plane.normal, [-np.sin(theta), 0, np.cos(theta)])
    foot = np.array([1.0, 0.2, np.tan(theta)])
    assert abs(penetration(foot, np.zeros(3), plane).depth) < 1e-12


def test_normal_force_branches():
    p = ContactParams(alpha_c=0.01, k_n=8000.0, d_n=0.0)
    np.testing.assert_array_equal(normal_force(-0.01, 0.0, p, UP), 0)
    np.testing.assert_allclose(normal_force(0.01, 0.0, p, UP), [0, 0, 40.0])
    np.testing.assert_allclose(normal_force(0.01 - 1e-12, 0.0, p, UP), [0, 0, 40.0], atol=1e-6)
    np.testing.assert_allclose(normal_force(0.02, 0.0, p, UP), [0, 0, 120.0])


def test_no_adhesion():
    p = ContactParams(k_n=8000.0, d_n=50000.0)
    assert np.all(normal_force(0.02, -5.0, p, UP) == 0)


def test_normal_force_slope_vanishes_at_touchdown():
    p = ContactParams(k_n=50000.0, d_n=0.0)
    slopes = [(normal_force(2 * h, 0, p, UP)[2] - normal_force(h, 0, p, UP)[2]) / h for h in (1e-3, 1e-4, 1e-5)]
    assert slopes[0] > slopes[1] > slopes[2] and slopes[2] < 2e-3 * p.k_n


def test_tangential_force_trivial_cases():
    p = ContactParams()
    assert np.all(tangential_force([0.01, 0, 0], [1, 0, 0], -0.001, 0.0, p) == 0)
    assert np.all(tangential_force(np.zeros(3), np.zeros(3), 0.02, 0.0, p) == 0)
    ft = tangential_force([0.001, 0, 0], [0, 0.1, 0], 0.02, 0.0, p)
    assert ft[0] < 0 and ft[1] < 0  # restoring spring and damper


@settings(max_examples=300, deadline=None)
@given(table_params, st.floats(-1, 1), st.floats(-0.01, 0.01), st.floats(-0.01, 0.01),
       st.floats(-1, 1), st.floats(-1, 1))
def test_branches_continuous(params, rate, px, py, vx, vy):
    a = params.alpha_c
    eps = 1e-15
    for depth in (0.0, a):
        lo_n = normal_force(depth - eps, rate, params, UP)
        hi_n = normal_force(depth + eps, rate, params, UP)
        assert np.abs(lo_n - hi_n).max() < 1e-12 * max(1.0, (params.k_n + params.d_n * abs(rate)) * a)
        lo_t = tangential_force([px, py, 0], [vx, vy, 0], depth - eps, rate, params)
        hi_t = tangential_force([px, py, 0], [vx, vy, 0], depth + eps, rate, params)
        scale_t = (params.k_t * np.hypot(px, py) + params.d_t * np.hypot(vx, vy)) * a
        assert np.abs(lo_t - hi_t).max() < 1e-12 * max(1.0, scale_t)
    # closed-form branch formulas coincide at the smoothing depth
    quad = (params.k_n + params.d_n * rate) * a * a / (2 * a)
    lin = (params.k_n + params.d_n * rate) * (a - a / 2)
    assert abs(quad - lin) < 1e-12 * max(1.0, abs(lin))


@settings(max_examples=300, deadline=None)
@given(table_params, st.floats(0, 0.05), st.floats(-2, 2), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02),
       st.floats(-2, 2), st.floats(-2, 2))
def test_saturation_and_no_adhesion_properties(params, depth, rate, px, py, vx, vy):
    f = foot_force([px, py, -depth], [vx, vy, -rate], True, [0, 0, 0], FLAT, params)
    assert f[2] >= 0
    assert np.hypot(f[0], f[1]) <= params.mu * f[2] + 1e-12 * max(1.0, f[2])
    # the compiled kernel computes the same force
    out = np.zeros(3)
    K.foot_contact_force(np.array([px, py, -depth]), np.array([vx, vy, -rate]), True, np.zeros(3),
                         FLAT.point, FLAT.normal, params.as_array(), out)
    np.testing.assert_allclose(out, f, rtol=1e-12, atol=1e-9)


def test_friction_saturate_examples():
    n = np.array([0, 0, 100.0])
    ft = np.array([30.0, 40.0, 0])
    np.testing.assert_array_equal(friction_saturate(ft, n, 0.8), ft)
    big = ft * 120 / 50
    out = friction_saturate(big, n, 0.8)
    np.testing.assert_allclose(np.linalg.norm(out), 80.0)
    np.testing.assert_allclose(out / 80.0, big / 120.0)
    assert np.all(friction_saturate(ft, np.zeros(3), 0.8) == 0)


def test_zero_friction_is_purely_normal():
    f = foot_force([0, 0, -0.02], [0.5, 0.2, -0.1], True, [0.01, 0, 0], FLAT, ContactParams(mu=0.0))
    assert f[0] == 0 and f[1] == 0 and f[2] > 0


def test_anchor_registration_and_clearing():
    state = ContactState.empty(1)
    state = update_contact_state(state, [[0.1, 0.2, 0.05]], FLAT)
    assert not state.in_contact[0]
    state = update_contact_state(state, [[0.1, 0.2, -0.004]], FLAT)
    assert state.in_contact[0]
    np.testing.assert_allclose(state.anchor[0], [0.1, 0.2, 0.0])
    # sliding while penetrating keeps the anchor
    for x in np.linspace(0.1, 0.2, 11):
        state = update_contact_state(state, [[x, 0.2, -0.004]], FLAT)
        np.testing.assert_allclose(state.anchor[0], [0.1, 0.2, 0.0])
        pen = penetration([x, 0.2, -0.004], np.zeros(3), FLAT, state.anchor[0])
        np.testing.assert_allclose(pen.tangential, [x - 0.1, 0, 0], atol=1e-15)
    state = update_contact_state(state, [[0.2, 0.2, 0.001]], FLAT)
    assert not state.in_contact[0]


def test_anchor_projected_on_inclined_plane():
    plane = GroundPlane.inclined(0.2)
    state = update_contact_state(ContactState.empty(1), [[0.5, 0, 0.0]], plane)
    assert state.in_contact[0]
    assert abs(plane.height_of(state.anchor[0])) < 1e-12


def test_settled_stance_carries_body_weight(planar_quadruped):
    m = planar_quadruped
    sysm = RigidBodySystem(m)
    x0 = m.default_state
    traj = sysm.rollout(sysm.hold_controller(x0, 500), x0, IntegratorChoice("rk4", 0.004))
    lam = sysm.contact_forces(traj)[-1]
    np.testing.assert_allclose(lam[:, 2].sum(), m.total_mass * 9.81, rtol=0.01)
    state = ContactState.from_array(traj.hidden[-1])
    feet = alg.foot_kinematics(m, traj.states[-1, : m.nv], traj.states[-1, m.nv:])
    np.testing.assert_allclose(total_contact_force(feet, state, FLAT, sysm.contact), lam, atol=1e-9)


def test_flight_has_no_forces(planar_quadruped):
    m = planar_quadruped
    q = m.default_state[: m.nv].copy()
    q[2] += 0.5
    feet = alg.foot_kinematics(m, q, np.ones(m.nv))
    assert np.all(total_contact_force(feet, ContactState.empty(4), FLAT, ContactParams()) == 0)
