import numpy as np
import pytest
from scipy.linalg import expm

from gaitopt.dynamics import (
    AffineController,
    DynamicsError,
    IntegratorChoice,
    LinearSystem,
    System,
    Trajectory,
    linearize,
    rollout,
    step,
)


class ZeroSystem(System):
    n_states = 3
    n_inputs = 1

    def derivative(self, x, u, hidden=None):
        return np.zeros(3)


class BlowUp(System):
    n_states = 1
    n_inputs = 1

    def derivative(self, x, u, hidden=None):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.array([x[0] ** 3])


def test_integrator_choice_validation():
    with pytest.raises(ValueError):
        IntegratorChoice("midpoint", 0.01)
    with pytest.raises(ValueError):
        IntegratorChoice("rk4", 0.0)
    assert IntegratorChoice("euler", 0.01).code == 0


def test_zero_dynamics_is_frozen():
    sysm = ZeroSystem()
    x = np.array([0.3, -1.0, 2.0])
    integ = IntegratorChoice("rk4", 0.01)
    for _ in range(50):
        x, _ = step(sysm, x, np.zeros(1), None, integ)
    np.testing.assert_array_equal(x, [0.3, -1.0, 2.0])
    traj = rollout(sysm, AffineController.open_loop(np.zeros((20, 1)), 3), x, integ)
    assert np.all(traj.states == x)


def test_rk4_matches_matrix_exponential():
    A = np.array([[0.0, 1.0, 0.0], [-4.0, -0.4, 1.0], [0.5, 0.0, -1.0]])
    sysm = LinearSystem(A, np.zeros((3, 1)))
    x0 = np.array([1.0, -0.5, 0.25])
    integ = IntegratorChoice("rk4", 0.001)
    traj = rollout(sysm, AffineController.open_loop(np.zeros((1000, 1)), 3), x0, integ)
    exact = expm(A * 1.0) @ x0
    assert np.linalg.norm(traj.final_state - exact) / np.linalg.norm(exact) < 1e-6


def test_stabilized_scalar_system_decays_monotonically():
    sysm = LinearSystem([[0.5]], [[1.0]])
    N = 200
    ctrl = AffineController(np.zeros((N, 1)), np.full((N, 1, 1), -3.0), np.zeros((N + 1, 1)))
    traj = rollout(sysm, ctrl, [1.0], IntegratorChoice("rk4", 0.01))
    norms = np.abs(traj.states[:, 0])
    assert np.all(np.diff(norms) < 0)
    # inputs are held over each step: x[k+1] = (e^{a dt} - 3 (e^{a dt} - 1) / a) x[k]
    phi = np.exp(0.5 * 0.01)
    factor = phi - 3.0 * (phi - 1.0) / 0.5
    np.testing.assert_allclose(traj.final_state[0], factor**N, rtol=1e-6)


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_linearization_of_linear_system_is_exact(method, rng):
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 2))
    sysm = LinearSystem(A, B)
    dt = 0.01
    integ = IntegratorChoice(method, dt)
    traj = rollout(sysm, AffineController.open_loop(rng.normal(size=(10, 2)), 4), rng.normal(size=4), integ)
    lin = linearize(sysm, traj, integ)
    if method == "euler":
        Ad, Bd = np.eye(4) + dt * A, dt * B
    else:
        Ad = sum(np.linalg.matrix_power(A * dt, k) / f for k, f in zip(range(5), [1, 1, 2, 6, 24]))
        Bd = sum(np.linalg.matrix_power(A * dt, k) / f for k, f in zip(range(4), [1, 2, 6, 24])) @ B * dt
    for k in range(traj.N):
        np.testing.assert_allclose(lin.A[k], Ad, atol=1e-10)
        np.testing.assert_allclose(lin.B[k], Bd, atol=1e-10)


def test_zero_alpha_reproduces_nominal_bit_for_bit(rng):
    sysm = LinearSystem([[0.0, 1.0], [-2.0, -0.1]], [[0.0], [1.0]])
    integ = IntegratorChoice("rk4", 0.01)
    nominal = rollout(sysm, AffineController.open_loop(rng.normal(size=(30, 1)), 2), [0.2, 0.0], integ)
    ctrl = AffineController(nominal.inputs, rng.normal(size=(30, 1, 2)), nominal.states, l=rng.normal(size=(30, 1)))
    again = rollout(sysm, ctrl, nominal.states[0], integ, alpha=0.0)
    assert np.array_equal(again.states, nominal.states)
    assert np.array_equal(again.inputs, nominal.inputs)


def test_blow_up_reports_time_index():
    integ = IntegratorChoice("euler", 0.5)
    with pytest.raises(DynamicsError) as info:
        rollout(BlowUp(), AffineController.open_loop(np.zeros((100, 1)), 1), [2.0], integ)
    assert info.value.time_index is not None and info.value.time_index < 100


def test_trajectory_shape_checks():
    with pytest.raises(ValueError):
        Trajectory(0.1, np.zeros((3, 2)), np.zeros((3, 1)))
    t = Trajectory(0.1, np.zeros((4, 2)), np.zeros((3, 1)))
    assert t.N == 3 and t.hidden.shape == (4, 0, 4)
    np.testing.assert_allclose(t.times, [0, 0.1, 0.2, 0.3])
