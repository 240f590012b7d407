import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitopt.dynamics import Trajectory
from gaitopt.schedule import debounce, extract_schedule, gait_statistics, schedule_from_flags

DT = 0.004


def traj_from_flags(flags):
    flags = np.asarray(flags, dtype=float)
    T, nf = flags.shape
    hidden = np.zeros((T, nf, 4))
    hidden[:, :, 0] = flags
    return Trajectory(DT, np.zeros((T, 1)), np.zeros((T - 1, 1)), hidden)


def test_full_stance_is_one_interval():
    sched = extract_schedule(traj_from_flags(np.ones((251, 4))), feet=["a", "b", "c", "d"])
    assert sched.intervals == tuple(((0.0, 1.0),) for _ in range(4))
    stats = gait_statistics(sched)
    assert all(v == 0 for v in stats.step_count.values())
    assert all(v == pytest.approx(1.0) for v in stats.duty_factor.values())


def test_synthetic_flight_phase():
    t = np.arange(501) * DT
    flight = (t >= 0.8) & (t < 1.0)
    flags = np.repeat(~flight[:, None], 4, axis=1)
    sched = extract_schedule(traj_from_flags(flags))
    for ivs in sched.intervals:
        assert len(ivs) == 2
        assert abs(ivs[0][1] - 0.8) <= DT and abs(ivs[1][0] - 1.0) <= DT
    assert all(v == 1 for v in gait_statistics(sched).step_count.values())


def test_chatter_is_merged():
    flags = np.ones(200, dtype=bool)
    flags[[50, 51, 120]] = False
    sched = schedule_from_flags(flags, DT, min_phase_duration=3 * DT)
    assert sched.intervals[0] == ((0.0, 199 * DT),)
    blips = np.zeros(200, dtype=bool)
    blips[[30, 31, 90]] = True
    assert schedule_from_flags(blips, DT).intervals[0] == ()


def test_diagonal_pair_overlaps():
    t = np.arange(1001) * DT
    phase = (np.floor(t / 0.25) % 2).astype(bool)
    lf, rh = phase, phase
    rf, lh = ~phase, ~phase
    sched = schedule_from_flags(np.stack([lf, rf, lh, rh], axis=1), DT, feet=["lf", "rf", "lh", "rh"])
    ov = gait_statistics(sched).overlap
    assert ov[("lf", "rh")] == pytest.approx(1.0)
    assert ov[("rf", "lh")] == pytest.approx(1.0)
    assert ov[("lf", "rf")] == pytest.approx(0.0)
    assert ov[("lh", "rh")] == pytest.approx(0.0)


flag_arrays = st.lists(st.booleans(), min_size=5, max_size=200)


@settings(max_examples=200, deadline=None)
@given(flag_arrays, st.integers(1, 6))
def test_intervals_reconstruct_debounced_signal(flags, min_samples):
    flags = np.array(flags)
    sched = schedule_from_flags(flags, DT, min_phase_duration=min_samples * DT)
    times = np.arange(len(flags)) * DT
    expected = debounce(flags, min_samples)
    got = sched.stance_mask(times)[:, 0]
    # the last knot closes the horizon and belongs to the final interval when it is stance
    np.testing.assert_array_equal(got[:-1], expected[:-1])
    ivs = sched.intervals[0]
    assert all(a < b for a, b in ivs)
    assert all(ivs[i][1] < ivs[i + 1][0] for i in range(len(ivs) - 1))
    assert all(0 <= a and b <= sched.t_final + 1e-12 for a, b in ivs)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=10, max_size=100), st.lists(st.booleans(), min_size=10, max_size=100),
       st.floats(-5, 5))
def test_statistics_invariant_to_time_shift(a, b, offset):
    n = min(len(a), len(b))
    sched = schedule_from_flags(np.stack([a[:n], b[:n]], axis=1), DT)
    s0, s1 = gait_statistics(sched), gait_statistics(sched.shifted(offset))
    assert s0.step_count == s1.step_count
    for key in s0.duty_factor:
        assert s0.duty_factor[key] == pytest.approx(s1.duty_factor[key], abs=1e-9)
    for key in s0.overlap:
        assert s0.overlap[key] == pytest.approx(s1.overlap[key], abs=1e-9)
