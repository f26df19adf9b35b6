"""Windowed occupation measures on the slow clock and their diagnostics.

A window ``[t(n), t(n)+T]`` collects the samples ``(x(k), Z(k))`` with
``t(k)`` inside it, each weighted by its slow-clock duration ``b(k)``.
Each sample becomes an atom tagged with its x-cell; conditional laws of z
are read per cell, while integrals use the atom positions.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError
from .fields import ProblemInstance, averaged_fast_field
from .sa_engine import TrajectoryRecord
from .timescale import DEFAULT_WINDOW, record_times

DEFAULT_CELL_WIDTH = 0.05
WEIGHT_TOL = 1e-9
RESIDUAL_CHUNK = 8192


# ---------------------------------------------------------------------------
# test functions


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, and its derivative."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        e0 = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        e1 = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        de0 = np.where(t > 0, e0 / np.where(t > 0, t, 1.0) ** 2, 0.0)
        de1 = np.where(t < 1, -e1 / np.where(t < 1, 1.0 - t, 1.0) ** 2, 0.0)
    den = e0 + e1
    val = e0 / den
    dval = (de0 * den - e0 * (de0 + de1)) / den ** 2
    return val, dval


class TestFunctionFamily:
    """Finite family of smooth test functions with gradients.

    ``values(x)`` returns ``(n_funcs, m)`` and ``gradients(x)`` returns
    ``(n_funcs, m, d)`` for points ``x`` of shape ``(m, d)``.
    """

    labels: list

    def __len__(self):
        return len(self.labels)

    def values(self, x):
        raise NotImplementedError

    def gradients(self, x):
        raise NotImplementedError


class MonomialFamily(TestFunctionFamily):
    """Monomials of total degree 1..degree in box-normalized coordinates times a
    cutoff that equals 1 on the box and vanishes ``margin`` outside it."""

    __test__ = False

    def __init__(self, box, degree: int = 4, margin: Optional[float] = None):
        box = np.asarray(box, dtype=float)
        self.d = box.shape[0]
        self.lo, self.hi = box[:, 0], box[:, 1]
        self.center = 0.5 * (self.lo + self.hi)
        self.half = 0.5 * (self.hi - self.lo)
        self.margin = float(self.half.min()) * 0.5 if margin is None else float(margin)
        self.exponents = [
            e for e in itertools.product(range(degree + 1), repeat=self.d) if 1 <= sum(e) <= degree
        ]
        self.exponents.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
        self.exponents = np.array(self.exponents, dtype=int)
        self.labels = ["u^" + "".join(map(str, e)) for e in self.exponents]

    def _cutoff(self, x):
        above, dabove = _smooth_step(1.0 - (x - self.hi) / self.margin)
        below, dbelow = _smooth_step(1.0 - (self.lo - x) / self.margin)
        per = above * below
        dper = -dabove / self.margin * below + above * dbelow / self.margin
        val = per.prod(axis=-1)
        grad = np.empty_like(x)
        for k in range(self.d):
            others = np.delete(per, k, axis=-1).prod(axis=-1)
            grad[..., k] = dper[..., k] * others
        return val, grad

    def _monomials(self, x):
        u = (x - self.center) / self.half
        E = self.exponents
        pw = u[None, :, :] ** E[:, None, :]
        val = pw.prod(axis=-1)
        grad = np.empty((len(E),) + x.shape)
        for k in range(self.d):
            e = E[:, k][:, None]
            dk = np.where(e > 0, e * u[None, :, k] ** np.maximum(e - 1, 0), 0.0) / self.half[k]
            grad[..., k] = dk * np.delete(pw, k, axis=-1).prod(axis=-1)
        return val, grad

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m, _ = self._monomials(x)
        c, _ = self._cutoff(x)
        return m * c[None, :]

    def gradients(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m, dm = self._monomials(x)
        c, dc = self._cutoff(x)
        return dm * c[None, :, None] + m[..., None] * dc[None, :, :]


def bump_profile(r):
    """``exp(1 - 1/(1 - r^2))`` on |r| < 1, zero outside, with its derivative."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    q = np.where(inside, 1.0 - r * r, 1.0)
    val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    dval = np.where(inside, val * (-2.0 * r / q ** 2), 0.0)
    return val, dval


class LocalFamily(TestFunctionFamily):
    """Translates of one profile with support radius ``radius`` around ``centers``.

    Gradients are local: ``grad_centered(x, c)`` vanishes unless every
    coordinate of ``x - c`` is below ``radius`` in magnitude.
    """

    nonnegative = False

    def __init__(self, centers, radius: float):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radius = float(radius)
        self.d = self.centers.shape[1]
        self.labels = [f"{self.prefix}{j}" for j in range(len(self.centers))]

    def value_centered(self, x, c):
        raise NotImplementedError

    def grad_centered(self, x, c):
        raise NotImplementedError

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.value_centered(x[None, :, :], self.centers[:, None, :])

    def gradients(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.grad_centered(x[None, :, :], self.centers[:, None, :])


class BumpFamily(LocalFamily):
    """Product bumps ``prod_k phi((x_k - c_k) / radius)``."""

    __test__ = False
    prefix = "bump"

    def value_centered(self, x, c):
        v, _ = bump_profile((x - c) / self.radius)
        return v.prod(axis=-1)

    def grad_centered(self, x, c):
        v, dv = bump_profile((x - c) / self.radius)
        grad = np.empty(v.shape)
        for k in range(v.shape[-1]):
            grad[..., k] = dv[..., k] / self.radius * np.delete(v, k, axis=-1).prod(axis=-1)
        return grad


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _bump_primitive(r):
    """``int_{-1}^{r} phi``, by Gauss-Legendre on the clipped interval."""
    r = np.clip(np.asarray(r, dtype=float), -1.0, 1.0)
    half = 0.5 * (r + 1.0)
    nodes = -1.0 + half[..., None] * (_GL_NODES + 1.0)
    return half * (bump_profile(nodes)[0] @ _GL_WEIGHTS)


class PrimitiveBumpFamily(LocalFamily):
    """One-dimensional smoothed steps whose derivative is a bump.

    ``f_j(x) = radius * Phi((x - c_j) / radius)`` with ``Phi' = phi``.  The
    steps are constant to the right of their support, so they are compactly
    supported only after the box cutoff; on the box their gradient is the
    nonnegative bump itself, which is what the invariant-measure program uses.
    """

    __test__ = False
    prefix = "step"
    nonnegative = True

    def __init__(self, centers, radius: float):
        super().__init__(centers, radius)
        if self.d != 1:
            raise InputError("primitive bumps are one-dimensional")

    def value_centered(self, x, c):
        return self.radius * _bump_primitive((x - c)[..., 0] / self.radius)

    def grad_centered(self, x, c):
        v, _ = bump_profile((x - c) / self.radius)
        return v


def default_family(inst: ProblemInstance, degree: int = 4) -> MonomialFamily:
    return MonomialFamily(inst.box_x, degree)


# ---------------------------------------------------------------------------
# windows and measures


@dataclass(frozen=True)
class WindowSamples:
    index: np.ndarray       # positions in the record
    times: np.ndarray       # slow-clock times t(k)
    duration: np.ndarray    # slow-clock durations to the next stored sample
    x: np.ndarray
    z: np.ndarray


def window_samples(record: TrajectoryRecord, n: int, T: float = DEFAULT_WINDOW) -> WindowSamples:
    """Stored samples with ``t(k)`` in ``[t(n), t(n)+T)``."""
    if not T > 0:
        raise InputError("window length must be positive")
    t = record_times(record, "slow")
    i0 = record.index_of(n)
    end = t[i0] + T
    if end > t[-1]:
        raise InputError(f"window [{t[i0]:.6g}, {end:.6g}] is not covered by the record (slow clock ends at {t[-1]:.6g})")
    i1 = int(np.searchsorted(t, end, side="left"))
    idx = np.arange(i0, i1)
    if idx.size == 0:
        raise InputError("empty window")
    return WindowSamples(idx, t[idx], t[idx + 1] - t[idx], record.x[idx], record.z[idx])


@dataclass(frozen=True)
class OccupationMeasure:
    points: np.ndarray      # (m, d) atom positions
    cells: np.ndarray       # (m, d) integer cell indices
    z: np.ndarray           # (m,)
    weights: np.ndarray     # (m,)
    cell_width: float
    origin: np.ndarray
    y_ref: np.ndarray
    window: tuple = (0.0, 0.0)
    y_drift: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0:
            raise InputError("occupation measure has no atoms")
        if np.any(w <= 0):
            raise InputError("occupation weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InputError(f"occupation weights sum to {w.sum():.12g}")

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (self.cells + 0.5) * self.cell_width

    def mix(self, other: "OccupationMeasure", alpha: float) -> "OccupationMeasure":
        return OccupationMeasure(
            np.vstack([self.points, other.points]), np.vstack([self.cells, other.cells]),
            np.concatenate([self.z, other.z]),
            np.concatenate([alpha * self.weights, (1 - alpha) * other.weights]),
            self.cell_width, self.origin, self.y_ref, self.window, max(self.y_drift, other.y_drift),
        )

    def relabeled(self, perm) -> "OccupationMeasure":
        inv = np.argsort(np.asarray(perm))
        return OccupationMeasure(self.points, self.cells, inv[self.z], self.weights, self.cell_width,
                                 self.origin, self.y_ref, self.window, self.y_drift)


def pool_atoms(x, z, w, cell_width, origin):
    """Pool weighted samples by (cell, z); returns centroids, cells, z, weights."""
    x = np.atleast_2d(x)
    cells = np.floor((x - origin) / cell_width).astype(np.int64)
    keys = np.column_stack([cells, z])
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    W = np.bincount(inv, weights=w, minlength=len(uniq))
    pts = np.stack([np.bincount(inv, weights=w * x[:, k], minlength=len(uniq)) for k in range(x.shape[1])], axis=1)
    return pts / W[:, None], uniq[:, :-1], uniq[:, -1], W


def window_occupation_measure(record: TrajectoryRecord, n: int, T: float = DEFAULT_WINDOW,
                              cell_width: float = DEFAULT_CELL_WIDTH, origin=None,
                              weighting: str = "slow", atoms: str = "sample") -> OccupationMeasure:
    """Occupation measure of ``(x, Z)`` over the slow window starting at step n.

    Every sample carries its cell index.  ``atoms`` picks the atom position:
    ``"sample"`` keeps ``x(k)`` itself, ``"centroid"`` pools samples per
    (cell, z) at their weighted centroid, ``"center"`` snaps to the cell
    center.  ``weighting="uniform"`` drops the slow-clock weights
    (diagnostic only).
    """
    ws = window_samples(record, n, T)
    origin = np.zeros(record.d) if origin is None else np.asarray(origin, dtype=float).reshape(record.d)
    if weighting == "slow":
        w = ws.duration
    elif weighting == "uniform":
        w = np.ones(len(ws.index))
    else:
        raise InputError(f"unknown weighting {weighting!r}")
    w = w / w.sum()
    if atoms == "sample":
        pts = ws.x
        cells = np.floor((pts - origin) / cell_width).astype(np.int64)
        zs, W = ws.z.astype(np.int64), w
    elif atoms in ("centroid", "center"):
        pts, cells, zs, W = pool_atoms(ws.x, ws.z, w, cell_width, origin)
        if atoms == "center":
            pts = origin + (cells + 0.5) * cell_width
    else:
        raise InputError(f"unknown atom placement {atoms!r}")
    W = W / W.sum()
    y_ref = record.y[ws.index[0]].copy()
    drift = float(np.abs(record.y[ws.index] - y_ref).max())
    return OccupationMeasure(pts, cells, zs, W, float(cell_width), origin, y_ref, (float(ws.times[0]), float(T)), drift)


def product_measure(inst: ProblemInstance, points, weights, y_ref, cell_width=DEFAULT_CELL_WIDTH, origin=None) -> OccupationMeasure:
    """Synthetic ``eta (x) pi_{x_cell, y_ref}``: each x atom is snapped to its cell
    center and split over z by the stationary law there."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float)
    origin = np.zeros(inst.d) if origin is None else np.asarray(origin, dtype=float)
    cells = np.floor((points - origin) / cell_width).astype(np.int64)
    centers = origin + (cells + 0.5) * cell_width
    y_ref = np.asarray(y_ref, dtype=float).reshape(inst.s)
    pi = inst.kernel.stationary(centers, y_ref[None, :])
    nz = inst.n_states
    w = (weights[:, None] * pi).ravel()
    keep = w > 0
    return OccupationMeasure(
        np.repeat(centers, nz, axis=0)[keep], np.repeat(cells, nz, axis=0)[keep],
        np.tile(np.arange(nz), len(points))[keep], w[keep], float(cell_width), origin, y_ref,
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class StationarityReport:
    joint: np.ndarray
    averaged: np.ndarray
    y_drift: float

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.joint).max())

    @property
    def max_abs_averaged(self) -> float:
        return float(np.abs(self.averaged).max())


def stationarity_residual(mu: OccupationMeasure, inst: ProblemInstance, family: Optional[TestFunctionFamily] = None) -> StationarityReport:
    """Per test function ``sum_atoms w <grad f(x), h(x, y_ref, z)>`` (joint form,
    z from the atom) and the averaged form with ``pi_{x, y_ref}`` in place of z."""
    family = default_family(inst) if family is None else family
    joint = np.zeros(len(family))
    averaged = np.zeros(len(family))
    for lo in range(0, len(mu.weights), RESIDUAL_CHUNK):
        sl = slice(lo, lo + RESIDUAL_CHUNK)
        x, z, w = mu.points[sl], mu.z[sl], mu.weights[sl]
        grads = family.gradients(x)                           # (nf, m, d)
        yb = np.broadcast_to(mu.y_ref, (len(w), inst.s))
        joint += np.einsum("fmd,md,m->f", grads, inst.h(x, yb, z), w)
        averaged += np.einsum("fmd,md,m->f", grads, averaged_fast_field(inst, x, yb), w)
    return StationarityReport(joint, averaged, mu.y_drift)


def disintegration_distance(mu: OccupationMeasure, inst: ProblemInstance) -> float:
    """Mass-weighted total variation between the empirical z-law in each occupied
    x-cell and ``pi_{x_cell, y_ref}``."""
    uniq, inv = np.unique(mu.cells, axis=0, return_inverse=True)
    inv = inv.ravel()
    nz = inst.n_states
    joint = np.zeros((len(uniq), nz))
    np.add.at(joint, (inv, mu.z), mu.weights)
    mass = joint.sum(axis=1)
    cond = joint / mass[:, None]
    centers = mu.origin + (uniq + 0.5) * mu.cell_width
    pi = inst.kernel.stationary(centers, np.broadcast_to(mu.y_ref, (len(uniq), inst.s)))
    tv = 0.5 * np.abs(cond - pi).sum(axis=1)
    return float(mass @ tv / mass.sum())


# ---------------------------------------------------------------------------
# serialization


def write_measure_csv(path, mu: OccupationMeasure) -> None:
    d = mu.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"cell_{k}" for k in range(d)] + [f"center_{k}" for k in range(d)]
                   + [f"centroid_{k}" for k in range(d)] + ["z", "weight"])
        for c, ctr, p, z, wt in zip(mu.cells, mu.centers, mu.points, mu.z, mu.weights):
            w.writerow([int(v) for v in c] + [repr(float(v)) for v in ctr] + [repr(float(v)) for v in p]
                       + [int(z), repr(float(wt))])


def write_residual_csv(path, report: StationarityReport, family: TestFunctionFamily) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["function_id", "joint_residual", "averaged_residual"])
        for label, j, a in zip(family.labels, report.joint, report.averaged):
            w.writerow([label, repr(float(j)), repr(float(a))])
