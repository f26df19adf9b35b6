"""Algorithmic clocks, piecewise-linear interpolation and ODE shadowing.

The fast clock advances by ``a(n)`` and the slow clock by ``b(n)`` per
iteration.  Interpolated paths are node exact: the path equals ``x(n)`` at
``tau(n)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, InputError, QueryError
from .fields import ProblemInstance, averaged_fast_field
from .sa_engine import StepSchedule, TrajectoryRecord

DEFAULT_WINDOW = 5.0


@dataclass(frozen=True)
class Clock:
    times: np.ndarray
    scale: str

    def __post_init__(self):
        if self.scale not in ("fast", "slow"):
            raise InputError("clock scale must be 'fast' or 'slow'")
        self.times.setflags(write=False)


def build_clocks(schedule: StepSchedule, N: int) -> tuple[Clock, Clock]:
    """Prefix sums ``tau(n) = sum_{k<n} a(k)`` and ``t(n) = sum_{k<n} b(k)`` for n = 0..N."""
    if N < 1:
        raise InputError("N must be at least 1")
    tau = np.concatenate([[0.0], np.cumsum(schedule.a(N))])
    t = np.concatenate([[0.0], np.cumsum(schedule.b(N))])
    return Clock(tau, "fast"), Clock(t, "slow")


def record_times(record: TrajectoryRecord, scale: str) -> np.ndarray:
    """Clock values at the record's stored step indices."""
    if scale not in ("fast", "slow"):
        raise InputError("scale must be 'fast' or 'slow'")
    fast, slow = build_clocks(record.schedule, record.N)
    clock = fast if scale == "fast" else slow
    return clock.times[record.n]


class InterpolatedPath:
    """Continuous piecewise-linear path through ``values`` at increasing ``times``."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if np.any(np.diff(self.times) <= 0):
            raise InputError("interpolation nodes must be strictly increasing")

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        if np.any(t < lo) or np.any(t > hi):
            raise QueryError(f"time outside path range [{lo:.6g}, {hi:.6g}]")
        cols = [np.interp(t, self.times, self.values[:, k]) for k in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)


def interpolated_path(record: TrajectoryRecord, scale: str) -> InterpolatedPath:
    vals = record.x if scale == "fast" else record.y
    return InterpolatedPath(record_times(record, scale), vals)


def interpolate(record: TrajectoryRecord, scale: str, t):
    """``xbar(t)`` on the fast clock or ``ybar(t)`` on the slow clock."""
    return interpolated_path(record, scale)(t)


def rk4(f: Callable, x0, T: float, dt: float):
    """Classical fixed-step RK4 on [0, T]; the step is shrunk so it divides T.

    Returns node times and states (batch axes of x0 are kept).
    """
    if not (T > 0 and dt > 0):
        raise InputError("T and dt must be positive")
    steps = max(1, math.ceil(T / dt - 1e-12))
    h = T / steps
    x = np.array(x0, dtype=float)
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for i in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"non-finite state at t = {(i + 1) * h:.6g}")
        out[i + 1] = x
    return np.linspace(0.0, T, steps + 1), out


def solve_frozen_fast_ode(inst: ProblemInstance, x0, y, T: float, dt: float):
    """Integrate ``xdot = h*(x, y)`` with ``y`` held fixed; returns ``(times, path)``."""
    y = np.asarray(y, dtype=float)
    return rk4(lambda x: averaged_fast_field(inst, x, y), x0, T, dt)


def observed_order(err_coarse: float, err_fine: float, ratio: float = 2.0) -> float:
    return math.log(err_coarse / err_fine) / math.log(ratio)


def _window_end_index(times, start, T):
    end_t = times[start] + T
    if end_t > times[-1]:
        raise QueryError(f"window [{times[start]:.6g}, {end_t:.6g}] exceeds the record (ends at {times[-1]:.6g})")
    return end_t


def fast_deviation(record: TrajectoryRecord, inst: ProblemInstance, n: int, T: float = DEFAULT_WINDOW,
                   dt: Optional[float] = None) -> float:
    """``sup_{t in [tau(n), tau(n)+T]} |xbar(t) - x^n(t)|`` where x^n solves the
    frozen averaged ODE from x(n) with y frozen at y(n).

    ``dt`` defaults to ``min(0.01, a(n))``; the sup is taken on a grid of
    ``10 T / dt`` points.
    """
    i = record.index_of(n)
    tau = record_times(record, "fast")
    end_t = _window_end_index(tau, i, T)
    if dt is None:
        dt = min(0.01, record.schedule.a_spec.at(n))
    times, path = solve_frozen_fast_ode(inst, record.x[i], record.y[i], T, dt)
    grid = np.linspace(0.0, T, max(2, int(round(10 * T / dt)) + 1))
    xbar = InterpolatedPath(tau, record.x)(np.minimum(tau[i] + grid, end_t))
    ode = InterpolatedPath(times, path)(grid)
    return float(np.linalg.norm(xbar - ode, axis=1).max())


def slow_deviation(record: TrajectoryRecord, inst: ProblemInstance, n: int, T: float = DEFAULT_WINDOW,
                   source: Optional[Callable] = None) -> float:
    """Sup gap on ``[t(n), t(n)+T]`` between ``ybar`` and the solution of
    ``ydot = int sum_z g(x, y, z) mu_s(dx, z)`` started at y(n).

    ``mu_s`` is the piecewise-constant occupation path of the record: on
    ``[t(k), t(k+1))`` it is the Dirac at ``(x(k), Z(k))``.  ``source``
    overrides :func:`ttsa.occupation.window_samples`.
    """
    if source is None:
        from .occupation import window_samples as source
    samples = source(record, n, T)
    y = record.y[samples.index[0]].copy()
    gaps = [0.0]
    for k in range(len(samples.index)):
        xk = samples.x[k]
        zk = np.asarray(samples.z[k])
        h = samples.duration[k]

        def f(v):
            return inst.g(xk, v, zk)

        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nxt = samples.index[k] + 1
        if nxt < len(record.n):
            gaps.append(float(np.linalg.norm(record.y[nxt] - y)))
    if not np.all(np.isfinite(y)):
        raise BlowUpError("slow ODE produced a non-finite state")
    return max(gaps)


def deviation_curve(record, inst, starts, T=DEFAULT_WINDOW, kind="fast"):
    """Rows ``(window_start_time, deviation)`` for the windows that fit in the record."""
    fn = fast_deviation if kind == "fast" else slow_deviation
    times = record_times(record, "fast" if kind == "fast" else "slow")
    rows = []
    for n in starts:
        try:
            i = record.index_of(int(n))
            dev = fn(record, inst, int(n), T)
        except (QueryError, InputError):
            continue
        rows.append((float(times[i]), dev))
    return rows


def write_deviation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_time", "deviation"])
        for t, dev in rows:
            w.writerow([repr(float(t)), repr(float(dev))])


def horizon_for_window(schedule: StepSchedule, n: int, T: float = DEFAULT_WINDOW, scale: str = "slow") -> int:
    """Smallest N whose record covers the window of length T starting at step n."""
    N = max(2 * n, 16)
    while True:
        times = build_clocks(schedule, N)[1 if scale == "slow" else 0].times
        if times[-1] >= times[n] + T:
            return int(np.searchsorted(times, times[n] + T, side="left"))
        N *= 2
