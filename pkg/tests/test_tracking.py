import json

import numpy as np
import pytest

from gaitopt.config import parse_config, resolve_task
from gaitopt.contact import GroundPlane
from gaitopt.rigidbody import RigidBodySystem
from gaitopt.rigidbody import algorithms as alg
from gaitopt.runner import EXIT_DIVERGED, run_config, simulate_config
from gaitopt.tracking import (
    PlaneFitError,
    PlantPerturbation,
    TrackingGains,
    base_virtual_model,
    contact_detection,
    distribute_wrench,
    ground_plane_fit,
    simulate_closed_loop,
    wrench_to_torques,
)


def test_plane_fit_spatial():
    true = GroundPlane.inclined(0.2, 0.1)
    rng = np.random.default_rng(0)
    t1 = np.cross(true.normal, [0, 1, 0])
    t2 = np.cross(true.normal, t1)
    pts = [true.point + a * t1 + b * t2 for a, b in rng.uniform(-1, 1, (4, 2))]
    fit = ground_plane_fit(pts)
    assert np.allclose(fit.normal, true.normal, atol=1e-12)
    assert fit.normal[2] > 0
    assert abs(true.height_of(fit.point)) < 1e-12


def test_plane_fit_planar_and_degenerate():
    fit = ground_plane_fit([[0, 0, 0.0], [1, 0, 0.1]], planar=True)
    expected = np.array([-0.1, 0, 1]) / np.hypot(0.1, 1)
    assert np.allclose(fit.normal, expected)
    with pytest.raises(PlaneFitError):
        ground_plane_fit([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    with pytest.raises(PlaneFitError):
        ground_plane_fit([[0, 0, 0]], planar=True)


def test_contact_detection_threshold():
    forces = np.array([[0, 0, 10.0], [5, 0, 2.0], [0, 0, 3.0]])
    assert contact_detection(forces, np.array([0, 0, 1.0]), 3.0).tolist() == [True, False, False]


def test_virtual_model_wraps_angles():
    P, D = np.diag([10.0, 20, 30]), np.diag([1.0, 2, 3])
    w = base_virtual_model([np.pi - 0.1, 0, 0], [-np.pi + 0.1, 0, 0], np.zeros(3), np.zeros(3), P, D, n_angles=1)
    assert w[0] == pytest.approx(10 * -0.2)
    assert np.allclose(base_virtual_model(np.ones(3), np.ones(3), np.ones(3), np.ones(3), P, D), 0)


def test_distribution_reproduces_wrench():
    pos = np.array([[0.3, 0, 0], [-0.3, 0, 0]])
    wrench = np.array([2.0, 5.0, 100.0])  # [tau_y, F_x, F_z]
    f, residual = distribute_wrench(wrench, pos, np.array([0.0, 0, 0.4]), planar=True)
    assert residual < 1e-9
    assert np.allclose(f.sum(axis=0)[[0, 2]], wrench[1:])
    r = pos - [0.0, 0, 0.4]
    tau_y = np.sum(r[:, 2] * f[:, 0] - r[:, 0] * f[:, 2])
    assert tau_y == pytest.approx(wrench[0])


def test_virtual_force_lifts_base(planar_quadruped):
    """Torques realizing an upward base force accelerate the standing base upward."""
    model = planar_quadruped
    system = RigidBodySystem(model)
    x = model.default_state.copy()
    q = x[: model.nv]
    u0 = system.static_torques(x)
    feet = alg.foot_kinematics(model, q)
    zi = model.position_names().index("base_z")
    xi = model.position_names().index("base_x")
    a0, _ = system.accelerations(x, u0)
    dist = wrench_to_torques(np.array([0.0, 0.0, 40.0]), feet, alg.center_of_mass(model, q), model)
    a1, _ = system.accelerations(x, u0 + dist.torques)
    assert a1[zi] - a0[zi] > 0.1
    dist = wrench_to_torques(np.array([0.0, 40.0, 0.0]), feet, alg.center_of_mass(model, q), model)
    a2, _ = system.accelerations(x, u0 + dist.torques)
    assert a2[xi] - a0[xi] > 0.1


@pytest.fixture(scope="module")
def hopper_solution():
    raw = json.loads(resolve_task("hopper-squat-jump").read_text())
    raw.update(t_f=0.5, dt=0.005)
    raw["cost"]["waypoints"] = [dict(raw["cost"]["waypoints"][0], t=0.25)]
    raw["solver"]["max_iterations"] = 5
    cfg = parse_config(raw, source=resolve_task("hopper-squat-jump"))
    res = run_config(cfg, write=False)
    return cfg, res.solution


def test_zero_gain_replay_is_exact(hopper_solution):
    cfg, sol = hopper_solution
    gains = TrackingGains.zeros(cfg.model.n_inputs, cfg.model.n_base)
    log = simulate_closed_loop(cfg.system, sol, gains, control_dt=cfg.dt)
    assert log.completed
    assert np.array_equal(log.states, sol.trajectory.states)
    assert np.allclose(log.tau_fb, 0)


def test_zero_perturbation_tracking(hopper_solution):
    cfg, sol = hopper_solution
    m = cfg.model
    gains = TrackingGains(m.pd_kp, m.pd_kd, np.diag([50.0, 200, 500]), np.diag([5.0, 20, 50]))
    log = simulate_closed_loop(cfg.system, sol, gains, control_dt=0.005)
    assert log.completed
    assert np.abs(log.joint_errors(m)).max() < 1e-3
    weight_share = 0.05 * m.total_mass * np.linalg.norm(m.gravity) / m.n_feet
    normals = np.array([pl.normal for pl in log.planes[: len(log.stance)]])
    assert np.array_equal(log.stance, np.einsum("cfi,ci->cf", log.forces, normals) > weight_share)


def test_heavier_plant_sags_without_feedback(hopper_solution):
    cfg, sol = hopper_solution
    m = cfg.model
    zi = m.position_names().index("base_z")
    zero = TrackingGains.zeros(m.n_inputs, m.n_base)
    # kd = 1: larger joint damping is unstable on the light shank under a 5 ms hold
    pd = TrackingGains(np.full(m.n_inputs, 300.0), np.ones(m.n_inputs), np.zeros((3, 3)), np.zeros((3, 3)))
    heavy = PlantPerturbation(mass_scale=1.1)
    open_loop = simulate_closed_loop(cfg.system, sol, zero, heavy, control_dt=0.005, sim_dt=0.001)
    closed = simulate_closed_loop(cfg.system, sol, pd, heavy, control_dt=0.005, sim_dt=0.001)
    err_open = np.abs(open_loop.states[:, zi] - open_loop.reference[:, zi]).max()
    err_closed = np.abs(closed.states[:, zi] - closed.reference[:, zi]).max()
    assert err_closed < err_open


def test_perturbation_scales_mass(hopper):
    system = RigidBodySystem(hopper)
    heavy = PlantPerturbation(mass_scale=1.05).apply(system)
    assert heavy.model.total_mass == pytest.approx(1.05 * hopper.total_mass)
    softer = PlantPerturbation(contact_param_scale=0.5).apply(system)
    assert softer.contact.k_n == pytest.approx(0.5 * system.contact.k_n)


def test_simulate_reports_divergence(hopper_solution):
    cfg, _ = hopper_solution
    raw = dict(cfg.raw, tracking={"control_dt": 0.005, "joint_kp": 150, "joint_kd": 3,
                               "perturbations": [{"mass_scale": 1.1}]})
    unstable = parse_config(raw, source=resolve_task("hopper-squat-jump"))
    res = simulate_config(unstable, None, solve_result=run_config(unstable, write=False))
    assert not res.summary[0]["completed"]
    assert res.exit_code == EXIT_DIVERGED
