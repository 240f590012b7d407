import numpy as np
import pytest

from gaitopt.cost import CostSpec, QuadraticCost, evaluate
from gaitopt.dynamics import AffineController, IntegratorChoice, LinearizedDynamics, LinearSystem
from gaitopt.slq import SolverSettings, backward_pass, line_search, solve


def discrete_lqr(A, B, Qd, Rd, P_final, N):
    """Textbook finite-horizon discrete LQR gains, u = K x."""
    P = P_final
    gains = []
    for _ in range(N):
        K = -np.linalg.solve(Rd + B.T @ P @ B, B.T @ P @ A)
        P = Qd + A.T @ P @ A + A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        gains.append(K)
    return gains[::-1]


def batch_lq_inputs(A, B, Qd, Rd, H, x0, x_des, N):
    """Optimal input sequence of a tracking LQ problem by one dense least-squares solve."""
    n, m = B.shape
    Phi = np.zeros(((N + 1) * n, n))
    Gam = np.zeros(((N + 1) * n, N * m))
    Ak = np.eye(n)
    for k in range(N + 1):
        Phi[k * n:(k + 1) * n] = Ak
        for j in range(k):
            Gam[k * n:(k + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(A, k - 1 - j) @ B
        Ak = A @ Ak
    W = np.zeros(((N + 1) * n, (N + 1) * n))
    for k in range(N):
        W[k * n:(k + 1) * n, k * n:(k + 1) * n] = Qd
    W[N * n:, N * n:] = H
    Rbig = np.kron(np.eye(N), Rd)
    ref = np.tile(x_des, N + 1) - Phi @ x0
    U = np.linalg.solve(Gam.T @ W @ Gam + Rbig, Gam.T @ W @ ref)
    return U.reshape(N, m)


def rk4_discrete(A, B, dt):
    n = A.shape[0]
    Ad = sum(np.linalg.matrix_power(A * dt, k) / f for k, f in zip(range(5), [1, 1, 2, 6, 24]))
    Bd = sum(np.linalg.matrix_power(A * dt, k) / f for k, f in zip(range(4), [1, 2, 6, 24])) @ B * dt
    return Ad, Bd


def lti_problem(seed=0, n=4, m=2, N=50, dt=0.02, x_des=None):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(n)  # stable
    B = rng.normal(size=(n, m))
    Q = np.diag(rng.uniform(0.5, 2.0, n))
    R = np.diag(rng.uniform(0.1, 1.0, m))
    H = 10 * np.eye(n)
    x_des = np.zeros(n) if x_des is None else x_des
    cost = CostSpec(H, Q, R, x_des)
    sysm = LinearSystem(A, B)
    settings = SolverSettings(max_iterations=10, integrator=IntegratorChoice("rk4", dt))
    x0 = rng.normal(size=n)
    init = AffineController.open_loop(np.zeros((N, m)), n)
    return sysm, cost, settings, x0, init


def test_backward_pass_scalar_hand_values():
    lin = LinearizedDynamics(np.ones((1, 1, 1)), np.ones((1, 1, 1)))
    quad = QuadraticCost(np.zeros(1), np.zeros((1, 1)), np.ones((1, 1, 1)), np.zeros((1, 1)), np.ones((1, 1, 1)),
                         0.0, np.zeros(1), np.ones((1, 1)))
    bp = backward_pass(lin, quad)
    assert bp.K[0, 0, 0] == pytest.approx(-0.5)
    assert bp.l[0, 0] == 0.0
    # P = Q + A'P A + K'HK + K'G + G'K = 1 + 1 + 0.5 - 0.5 - 0.5
    assert bp.value.P[0, 0, 0] == pytest.approx(1.5)


def test_backward_pass_without_control_authority():
    rng = np.random.default_rng(1)
    N, n, m = 5, 3, 2
    R = np.array([[2.0, 0.3], [0.3, 1.0]])
    quad = QuadraticCost(np.zeros(N), rng.normal(size=(N, n)), np.tile(np.eye(n), (N, 1, 1)),
                         rng.normal(size=(N, m)), np.tile(R, (N, 1, 1)), 0.0, np.zeros(n), np.eye(n))
    bp = backward_pass(LinearizedDynamics(np.tile(np.eye(n), (N, 1, 1)), np.zeros((N, n, m))), quad)
    assert np.all(bp.K == 0)
    np.testing.assert_allclose(bp.l, -np.linalg.solve(R, quad.r_vec.T).T, atol=1e-12)


def test_gains_match_textbook_lqr():
    sysm, cost, settings, x0, init = lti_problem()
    dt, N = settings.dt, init.N
    Ad, Bd = rk4_discrete(sysm.A, sysm.B, dt)
    sol = solve(sysm, cost, x0, init, settings)
    oracle = discrete_lqr(Ad, Bd, cost.Q * dt, cost.R * dt, cost.H, N)
    for k in range(N):
        np.testing.assert_allclose(sol.K[k], oracle[k], atol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_one_iteration_on_lq_problem(seed):
    sysm, cost, settings, x0, init = lti_problem(seed, x_des=np.array([0.5, -0.2, 0.1, 0.0]))
    dt, N = settings.dt, init.N
    sol = solve(sysm, cost, x0, init, settings)
    assert sol.converged and sol.iterations_used == 1
    Ad, Bd = rk4_discrete(sysm.A, sysm.B, dt)
    U = batch_lq_inputs(Ad, Bd, cost.Q * dt, cost.R * dt, cost.H, x0, cost.x_des, N)
    assert np.abs(sol.u_ff - U).max() < 1e-8
    oracle = sysm.rollout(AffineController.open_loop(U, 4), x0, settings.integrator)
    assert abs(sol.cost - evaluate(cost, oracle)) <= 1e-8 * evaluate(cost, oracle)


def test_double_integrator_reach():
    sysm = LinearSystem([[0, 1], [0, 0]], [[0], [1]])
    cost = CostSpec(np.diag([1e4, 1e2]), np.diag([1e-3, 1e-3]), [[1e-2]], [2.0, 0.0])
    settings = SolverSettings(integrator=IntegratorChoice("rk4", 0.01))
    sol = solve(sysm, cost, [0.0, 0.0], AffineController.open_loop(np.zeros((200, 1)), 2), settings)
    assert abs(sol.trajectory.final_state[0] - 2.0) < 1e-3
    assert sol.iterations_used == 1


def test_line_search_with_zero_increment_reports_no_improvement():
    sysm, cost, settings, x0, init = lti_problem()
    nominal = sysm.rollout(init, x0, settings.integrator)
    N = nominal.N
    ls = line_search(sysm, cost, nominal, np.zeros((N, 2, 4)), np.zeros((N, 2)), settings)
    assert not ls.accepted
    assert ls.tried[0][1] == pytest.approx(evaluate(cost, nominal))


def test_cost_scaling_leaves_gains_unchanged():
    sysm, cost, settings, x0, init = lti_problem(3, x_des=np.ones(4))
    settings = SolverSettings(max_iterations=0, integrator=settings.integrator)
    a = solve(sysm, cost, x0, init, settings)
    b = solve(sysm, cost.scaled(37.0), x0, init, settings)
    np.testing.assert_allclose(a.K, b.K, atol=1e-10)
    np.testing.assert_allclose(a.l, b.l, atol=1e-10)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(alpha_d=1.0)
    with pytest.raises(ValueError):
        SolverSettings(convergence_threshold=0.0)
    with pytest.raises(ValueError):
        SolverSettings(max_line_search_steps=0)
