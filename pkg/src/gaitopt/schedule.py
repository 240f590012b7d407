"""Contact schedules and gait statistics extracted from trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dynamics import Trajectory


@dataclass(frozen=True)
class ContactSchedule:
    """Per-foot sorted, disjoint stance intervals ``[touchdown, liftoff)`` in seconds."""

    feet: tuple
    intervals: tuple
    t_final: float
    dt: float
    t_start: float = 0.0

    @property
    def horizon(self) -> float:
        return self.t_final - self.t_start

    def stance_mask(self, times: np.ndarray) -> np.ndarray:
        """Boolean (len(times), n_feet) array reconstructed from the intervals."""
        times = np.asarray(times, dtype=float)
        out = np.zeros((len(times), len(self.feet)), dtype=bool)
        tol = 1e-9 * max(1.0, abs(self.t_final))
        for f, ivs in enumerate(self.intervals):
            for a, b in ivs:
                out[:, f] |= (times >= a - tol) & (times < b - tol)
        return out

    def shifted(self, offset: float) -> "ContactSchedule":
        ivs = tuple(tuple((a + offset, b + offset) for a, b in iv) for iv in self.intervals)
        return ContactSchedule(self.feet, ivs, self.t_final + offset, self.dt, self.t_start + offset)

    def as_dict(self) -> dict:
        return {
            "t_start": self.t_start,
            "t_final": self.t_final,
            "dt": self.dt,
            "feet": {
                name: [[float(a), float(b)] for a, b in ivs] for name, ivs in zip(self.feet, self.intervals)
            },
        }


def debounce(flags: np.ndarray, min_samples: int) -> np.ndarray:
    """Fill gaps shorter than ``min_samples``, then drop stance runs shorter than that."""
    flags = np.asarray(flags, dtype=bool).copy()
    if min_samples <= 1:
        return flags
    for value in (False, True):
        runs = _runs(flags)
        for start, stop, v in runs:
            # interior runs only; a short run touching the horizon boundary is kept
            if v == value and stop - start < min_samples and start > 0 and stop < len(flags):
                flags[start:stop] = not value
    return flags


def _runs(flags: np.ndarray) -> list:
    out = []
    if len(flags) == 0:
        return out
    start = 0
    for k in range(1, len(flags) + 1):
        if k == len(flags) or flags[k] != flags[start]:
            out.append((start, k, bool(flags[start])))
            start = k
    return out


def schedule_from_flags(flags: np.ndarray, dt: float, feet=None, min_phase_duration: float | None = None) -> ContactSchedule:
    """Build a schedule from a (T, n_feet) in-contact array sampled every ``dt``.

    Sample ``k`` represents the interval ``[k dt, (k+1) dt)``; the horizon ends
    at ``(T - 1) dt``, the time of the last knot.
    """
    flags = np.asarray(flags, dtype=bool)
    if flags.ndim == 1:
        flags = flags[:, None]
    T, nf = flags.shape
    t_final = (T - 1) * dt
    feet = tuple(feet) if feet is not None else tuple(f"foot{i}" for i in range(nf))
    min_samples = 3 if min_phase_duration is None else int(np.ceil(min_phase_duration / dt - 1e-9))
    intervals = []
    for f in range(nf):
        clean = debounce(flags[:, f], min_samples)
        ivs = []
        for start, stop, v in _runs(clean):
            if v:
                ivs.append((start * dt, min(stop * dt, t_final) if stop < T else t_final))
        intervals.append(tuple(iv for iv in ivs if iv[1] > iv[0]))
    return ContactSchedule(feet, tuple(intervals), t_final, dt)


def extract_schedule(trajectory: Trajectory, feet=None, min_phase_duration: float | None = None) -> ContactSchedule:
    """Stance intervals from the recorded hidden contact flags."""
    flags = trajectory.hidden[:, :, 0] > 0.5
    return schedule_from_flags(flags, trajectory.dt, feet, min_phase_duration)


@dataclass(frozen=True)
class GaitStatistics:
    step_count: dict
    duty_factor: dict
    overlap: dict

    def as_dict(self) -> dict:
        return {
            "step_count": dict(self.step_count),
            "duty_factor": dict(self.duty_factor),
            "overlap": {f"{a}/{b}": v for (a, b), v in self.overlap.items()},
        }


def _intersection(a: tuple, b: tuple) -> float:
    total = 0.0
    for s0, e0 in a:
        for s1, e1 in b:
            total += max(0.0, min(e0, e1) - max(s0, s1))
    return total


def gait_statistics(schedule: ContactSchedule) -> GaitStatistics:
    """Swing counts, duty factors and pairwise stance overlap.

    A step is a lift-off inside the horizon.  The overlap of two feet is the
    time both are in stance divided by the time either is (1 for identical
    schedules, 0 for disjoint ones, 1 when both never touch down).
    """
    T = schedule.horizon
    tol = 1e-9 * max(1.0, abs(schedule.t_final))
    steps, duty, overlap = {}, {}, {}
    for name, ivs in zip(schedule.feet, schedule.intervals):
        steps[name] = sum(1 for _, b in ivs if b < schedule.t_final - tol)
        duty[name] = sum(b - a for a, b in ivs) / T if T > 0 else 0.0
    for (i, a), (j, b) in combinations(enumerate(schedule.feet), 2):
        ia, ib = schedule.intervals[i], schedule.intervals[j]
        both = _intersection(ia, ib)
        either = sum(e - s for s, e in ia) + sum(e - s for s, e in ib) - both
        overlap[(a, b)] = both / either if either > tol else 1.0
    return GaitStatistics(steps, duty, overlap)
