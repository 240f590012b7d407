import numpy as np
import pytest

from gaitopt.contact import ContactParams
from gaitopt.dynamics import DynamicsError, IntegratorChoice, Trajectory, check_jacobians
from gaitopt.rigidbody import RigidBodySystem
from gaitopt.rigidbody import algorithms as alg

from conftest import load_model

PARAMS = ContactParams(alpha_c=0.01, k_n=2e4, d_n=2e3, k_t=5e4, d_t=500.0, mu=0.8)


def _away_from_boundaries(sysm, x, u, hidden, dt):
    """True when no foot crosses a contact-law branch during the step."""
    m = sysm.model
    xn, _ = sysm.step(x, u, hidden, IntegratorChoice("euler", dt))
    for state in (x, xn, 0.5 * (x + xn)):
        depth = -sysm.foot_positions(state)[0][:, 2]
        for d in depth:
            if min(abs(d), abs(d - PARAMS.alpha_c)) < 3e-3:
                return False
        _, lam = sysm.accelerations(state, u, hidden)
        for f in lam:
            fn, ft = f[2], np.linalg.norm(f[:2])
            if fn > 0 and abs(ft - PARAMS.mu * fn) < 0.05 * fn:
                return False
    return True


def _sample(sysm, rng, dt):
    m = sysm.model
    while True:
        x = m.default_state.copy()
        x[: m.nv] += 0.15 * rng.uniform(-1, 1, m.nv)
        x[m.n_base - 1] += rng.uniform(-0.03, 0.05)
        x[m.nv:] = 0.2 * rng.uniform(-1, 1, m.nv)
        u = rng.normal(size=m.n_inputs) * 3
        hidden = sysm.initial_hidden(x)
        # shift anchors so the tangential spring is loaded
        hidden[:, 1:3] += np.where(hidden[:, :1] > 0.5, rng.uniform(-0.002, 0.002, (m.n_feet, 2)), 0)
        if _away_from_boundaries(sysm, x, u, hidden, dt):
            return x, u, hidden


def _fd_step_jacobians(sysm, x, u, hidden, integ):
    n, mm = len(x), len(u)
    A = np.zeros((n, n))
    B = np.zeros((n, mm))
    for j in range(n):
        h = max(1e-6, 1e-6 * abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        A[:, j] = (sysm.step(x + e, u, hidden, integ)[0] - sysm.step(x - e, u, hidden, integ)[0]) / (2 * h)
    for j in range(mm):
        e = np.zeros(mm)
        e[j] = 1e-4
        B[:, j] = (sysm.step(x, u + e, hidden, integ)[0] - sysm.step(x, u - e, hidden, integ)[0]) / 2e-4
    return A, B


@pytest.mark.parametrize("name,method,samples", [
    ("planar_quadruped", "rk4", 40),
    ("planar_quadruped", "euler", 20),
    ("spatial_quadruped", "rk4", 25),
    ("planar_hopper", "rk4", 15),
])
def test_step_jacobians_match_finite_differences(name, method, samples):
    rng = np.random.default_rng(7)
    sysm = RigidBodySystem(load_model(name), PARAMS)
    integ = IntegratorChoice(method, 0.004)
    for _ in range(samples):
        x, u, hidden = _sample(sysm, rng, integ.dt)
        A, B = sysm.discrete_jacobians(x, u, hidden, integ)
        A_fd, B_fd = _fd_step_jacobians(sysm, x, u, hidden, integ)
        assert np.abs(A_fd - A).max() / (1 + np.abs(A).max()) < 1e-4
        assert np.abs(B_fd - B).max() / (1 + np.abs(B).max()) < 1e-4


def test_flight_phase_has_no_contact_contribution(hopper):
    rng = np.random.default_rng(3)
    airborne = RigidBodySystem(hopper, PARAMS)
    frictionless = RigidBodySystem(hopper, ContactParams(k_n=0.0, d_n=0.0, k_t=0.0, d_t=0.0, mu=0.0))
    x = hopper.default_state.copy()
    x[2] += 0.3
    x[hopper.nv:] = rng.normal(size=hopper.nv) * 0.2
    u = rng.normal(size=2)
    _, lam = airborne.accelerations(x, u)
    assert np.all(lam == 0)
    A1, B1 = airborne.continuous_jacobians(x, u)
    A0, B0 = frictionless.continuous_jacobians(x, u)
    np.testing.assert_array_equal(A1, A0)
    np.testing.assert_array_equal(B1, B0)
    # input columns are M^-1 S^T exactly
    M = alg.mass_matrix(hopper, x[: hopper.nv])
    np.testing.assert_allclose(B1[hopper.nv:], np.linalg.solve(M, alg.actuation_matrix(hopper).T), atol=1e-12)


def test_kinematic_row_is_analytic(spatial_quadruped):
    m = spatial_quadruped
    sysm = RigidBodySystem(m, PARAMS)
    rng = np.random.default_rng(11)
    x = m.default_state.copy()
    x[:3] = [0.3, -0.4, 1.2]
    x[5] += 1.0
    x[m.nv:] = rng.normal(size=m.nv)
    A, _ = sysm.continuous_jacobians(x, np.zeros(m.n_inputs))
    f = lambda z: sysm.derivative(z, np.zeros(m.n_inputs))[: m.nv]
    for j in range(m.n_states):
        e = np.zeros(m.n_states)
        e[j] = 1e-6
        np.testing.assert_allclose(A[: m.nv, j], (f(x + e) - f(x - e)) / 2e-6, atol=1e-7)


def test_linearize_along_rollout_and_non_finite_report(planar_quadruped):
    sysm = RigidBodySystem(planar_quadruped, PARAMS)
    integ = IntegratorChoice("rk4", 0.004)
    x0 = planar_quadruped.default_state
    traj = sysm.rollout(sysm.hold_controller(x0, 20), x0, integ)
    lin = sysm.linearize(traj, integ)
    assert lin.A.shape == (20, 22, 22) and lin.B.shape == (20, 22, 8)
    np.testing.assert_allclose(lin.A[5], sysm.discrete_jacobians(traj.states[5], traj.inputs[5], traj.hidden[5], integ)[0])
    A = lin.A.copy()
    A[7, 3, 4] = np.nan
    with pytest.raises(DynamicsError, match=r"A\[3,4\] at step 7") as info:
        check_jacobians(A, lin.B)
    assert info.value.time_index == 7


def test_rollout_is_deterministic_and_anchor_invariant(planar_quadruped):
    sysm = RigidBodySystem(planar_quadruped, PARAMS)
    integ = IntegratorChoice("rk4", 0.004)
    x0 = planar_quadruped.default_state.copy()
    x0[2] += 0.08
    ctrl = sysm.hold_controller(planar_quadruped.default_state, 150)
    a = sysm.rollout(ctrl, x0, integ)
    b = sysm.rollout(ctrl, x0, integ)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.hidden, b.hidden)
    nominal = Trajectory(a.dt, a.states, a.inputs, a.hidden)
    replay = sysm.rollout(type(ctrl)(a.inputs, ctrl.K, a.states, l=np.ones_like(a.inputs)), x0, integ, alpha=0.0)
    assert np.array_equal(replay.states, nominal.states)
    # anchors stay fixed while the contact flag stays set
    h = a.hidden
    assert h[:, :, 0].max() == 1.0
    for f in range(h.shape[1]):
        for k in range(1, h.shape[0]):
            if h[k, f, 0] and h[k - 1, f, 0]:
                assert np.array_equal(h[k, f, 1:], h[k - 1, f, 1:])


def test_gimbal_lock_guard(spatial_quadruped):
    from gaitopt.dynamics import GimbalLockError

    sysm = RigidBodySystem(spatial_quadruped, PARAMS)
    x = spatial_quadruped.default_state.copy()
    x[1] = np.pi / 2 - 5e-4
    with pytest.raises(GimbalLockError):
        sysm.step(x, np.zeros(12), None, IntegratorChoice())
