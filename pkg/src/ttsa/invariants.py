"""Invariant distributions of the fast ODE, the set-valued slow drift and
its chain-recurrent structure.

The invariant-measure set J_y is computed two ways.  In one dimension the
extreme points are Diracs at the equilibria of ``h*(., y)``.  In general it
is the feasible set of a linear program over mass per fast-grid cell: for
each test function f the integrand ``<grad f, h*>`` is bracketed on every
cell by sampling it on a sub-grid, and a cell distribution is feasible when
the bracketed integral can be zero.  The relaxation is outer, so a Dirac at
any equilibrium is always feasible.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.optimize import bisect, linprog

from .errors import InputError, ResolutionError, UnsupportedError
from .fields import AtomMeasure, ProblemInstance, averaged_fast_field, averaged_slow_integrand
from .occupation import BumpFamily, LocalFamily, MonomialFamily, PrimitiveBumpFamily, TestFunctionFamily
from .sa_engine import TrajectoryRecord

ROOT_XTOL = 1e-12
DEFAULT_SLOW_CELLS = 400
DEFAULT_EPS_CELLS = 2
DEFAULT_T_MIN = 1.0
SUPPORT_THRESHOLD = 1e-7


# ---------------------------------------------------------------------------
# one-dimensional equilibria


def _h1(inst, y):
    y = np.asarray(y, dtype=float).reshape(inst.s)

    def f(x):
        x = np.asarray(x, dtype=float)
        return averaged_fast_field(inst, x.reshape(-1, 1), y[None, :])[:, 0].reshape(x.shape)

    return f


def equilibria_1d(inst: ProblemInstance, y, interval=None, resolution: Optional[float] = None) -> np.ndarray:
    """Zeros of ``h*(., y)`` on an interval: sign changes of the field on a
    uniform scan, refined by bisection, plus exact zeros of the scan."""
    if inst.d != 1:
        raise UnsupportedError(f"equilibria_1d needs d = 1, got d = {inst.d}")
    lo, hi = (inst.box_x[0] if interval is None else interval)
    lo, hi = float(lo), float(hi)
    if not hi > lo:
        raise InputError("interval must have positive length")
    if resolution is None:
        resolution = (hi - lo) / 4000
    m = max(2, int(math.ceil((hi - lo) / resolution)) + 1)
    xs = np.linspace(lo, hi, m)
    f = _h1(inst, y)
    v = f(xs)
    roots = list(xs[v == 0.0])
    for i in np.flatnonzero(v[:-1] * v[1:] < 0):
        roots.append(bisect(lambda t: float(f(np.array(t))), xs[i], xs[i + 1], xtol=ROOT_XTOL))
    roots = np.sort(np.array(roots, dtype=float))
    if roots.size > 1:
        roots = roots[np.concatenate([[True], np.diff(roots) > 10 * ROOT_XTOL])]
    return roots


def root_stability(inst: ProblemInstance, y, root: float, delta: float = 1e-6) -> str:
    """``"stable"``, ``"unstable"`` or ``"degenerate"`` from the slope of h* at a root."""
    f = _h1(inst, y)
    slope = float(f(np.array(root + delta)) - f(np.array(root - delta))) / (2 * delta)
    if abs(slope) < 1e-8:
        return "degenerate"
    return "stable" if slope < 0 else "unstable"


# ---------------------------------------------------------------------------
# fast grid and the linear program


@dataclass(frozen=True)
class FastGrid:
    origin: np.ndarray
    cell_width: float
    shape: tuple

    @classmethod
    def over_box(cls, box, cell_width: float) -> "FastGrid":
        box = np.asarray(box, dtype=float)
        if not cell_width > 0:
            raise InputError("cell width must be positive")
        shape = tuple(int(math.ceil((hi - lo) / cell_width - 1e-9)) for lo, hi in box)
        return cls(box[:, 0].copy(), float(cell_width), shape)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def multi_index(self) -> np.ndarray:
        return np.array(list(itertools.product(*(range(n) for n in self.shape))), dtype=np.int64)

    def centers(self) -> np.ndarray:
        return self.origin + (self.multi_index() + 0.5) * self.cell_width

    def cell_of(self, x) -> np.ndarray:
        return np.floor((np.atleast_2d(x) - self.origin) / self.cell_width).astype(np.int64)

    def flat(self, idx) -> np.ndarray:
        return np.ravel_multi_index(np.asarray(idx).T, self.shape)


def default_cell_width(inst: ProblemInstance) -> float:
    return 0.02 if inst.d == 1 else 0.1


def default_local_family(inst: ProblemInstance, grid: FastGrid, radius_cells: float = 2.0) -> LocalFamily:
    """Bumps centered on every cell and on a ghost ring one cell outside the box."""
    ghost = itertools.product(*(range(-1, n + 1) for n in grid.shape))
    centers = grid.origin + (np.array(list(ghost), dtype=float) + 0.5) * grid.cell_width
    radius = radius_cells * grid.cell_width
    if inst.d == 1:
        return PrimitiveBumpFamily(centers, radius)
    return BumpFamily(centers, radius)


def _subgrid(grid: FastGrid, k: int) -> np.ndarray:
    """Sub-sample points per cell, shape (n_cells, k**d, d), cell edges included."""
    offs = np.linspace(0.0, 1.0, k)
    local = np.array(list(itertools.product(offs, repeat=grid.d)))
    lower = grid.origin + grid.multi_index() * grid.cell_width
    return lower[:, None, :] + local[None, :, :] * grid.cell_width


def _bracket(A, k, d):
    """Cell-wise lower and upper bounds of sampled values A (..., k**d).

    Between sub-samples a smooth function departs from its linear
    interpolant by at most ``delta^2 max|A''| / 8`` per axis; second
    differences estimate ``delta^2 A''`` and a factor 2 covers the estimate.
    """
    shaped = A.reshape(A.shape[:-1] + (k,) * d)
    margin = np.zeros(A.shape[:-1])
    for ax in range(d):
        second = np.abs(np.diff(shaped, n=2, axis=A.ndim - 1 + ax))
        margin = margin + second.reshape(A.shape[:-1] + (-1,)).max(axis=-1) / 4.0
    return A.min(axis=-1) - margin, A.max(axis=-1) + margin


def _product_bracket(g, h_lo, h_hi, k, d, nonnegative):
    """Interval bound of ``sum_k g_k h_k`` from separate brackets of the factors."""
    g_lo, g_hi = _bracket(np.moveaxis(g, -1, 1), k, d)          # (c, d)
    if nonnegative:
        g_lo = np.maximum(g_lo, 0.0)
    prods = np.stack([g_lo * h_lo, g_lo * h_hi, g_hi * h_lo, g_hi * h_hi])
    return prods.min(axis=0).sum(axis=-1), prods.max(axis=0).sum(axis=-1)


@dataclass
class _Program:
    grid: FastGrid
    lower: sparse.csr_matrix     # (n_constraints, n_cells)
    upper: sparse.csr_matrix
    tol: float
    labels: list
    slow_lo: np.ndarray          # (n_cells, s) bracket of the pi-averaged slow integrand
    slow_hi: np.ndarray
    slow_mid: np.ndarray

    def feasible(self, w, slack: float = 1e-9) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(
            np.all(w >= -slack) and abs(w.sum() - 1.0) <= 1e-8
            and np.all(self.lower @ w <= self.tol + slack)
            and np.all(self.upper @ w >= -self.tol - slack)
        )


def _assemble(inst, y, grid, family, local, tol, k):
    y = np.asarray(y, dtype=float).reshape(inst.s)
    pts = _subgrid(grid, k)                                    # (C, P, d)
    C, P, d = pts.shape
    flat_pts = pts.reshape(-1, d)
    hstar = averaged_fast_field(inst, flat_pts, y[None, :]).reshape(C, P, d)
    rows_lo, rows_hi, labels = [], [], []
    if family is not None and len(family):
        grads = family.gradients(flat_pts).reshape(len(family), C, P, d)
        lo, hi = _bracket(np.einsum("fcpd,cpd->fcp", grads, hstar), k, d)
        rows_lo.append(sparse.csr_matrix(lo))
        rows_hi.append(sparse.csr_matrix(hi))
        labels += list(family.labels)
    if local is not None:
        n_local = len(local.centers)
        ghost_shape = tuple(n + 2 for n in grid.shape)
        cells = grid.multi_index()
        span = int(math.ceil(local.radius / grid.cell_width + 0.5))
        h_lo, h_hi = _bracket(np.moveaxis(hstar, -1, 1), k, d)   # (C, d)
        r_i, c_i, lo_v, hi_v = [], [], [], []
        for off in itertools.product(range(-span, span + 1), repeat=d):
            ghost_idx = cells + np.array(off) + 1
            ok = np.all((ghost_idx >= 0) & (ghost_idx < np.array(ghost_shape)), axis=1)
            if not ok.any():
                continue
            j = np.ravel_multi_index(ghost_idx[ok].T, ghost_shape)
            ctr = local.centers[j]
            g = local.grad_centered(pts[ok], ctr[:, None, :])  # (c, P, d)
            lo, hi = _bracket(np.einsum("cpd,cpd->cp", g, hstar[ok]), k, d)
            plo, phi = _product_bracket(g, h_lo[ok], h_hi[ok], k, d, local.nonnegative)
            lo, hi = np.maximum(lo, plo), np.minimum(hi, phi)
            nz = (lo != 0) | (hi != 0)
            r_i.append(j[nz]); c_i.append(np.flatnonzero(ok)[nz]); lo_v.append(lo[nz]); hi_v.append(hi[nz])
        r_i, c_i = np.concatenate(r_i), np.concatenate(c_i)
        rows_lo.append(sparse.csr_matrix((np.concatenate(lo_v), (r_i, c_i)), shape=(n_local, C)))
        rows_hi.append(sparse.csr_matrix((np.concatenate(hi_v), (r_i, c_i)), shape=(n_local, C)))
        labels += list(local.labels)
    if not rows_lo:
        raise InputError("empty test family")
    gbar = averaged_slow_integrand(inst, flat_pts, y[None, :]).reshape(C, P, inst.s)
    slow_lo, slow_hi = _bracket(np.moveaxis(gbar, -1, 1), k, d)   # (C, s)
    slow_mid = averaged_slow_integrand(inst, grid.centers(), y[None, :])
    return _Program(grid, sparse.vstack(rows_lo).tocsr(), sparse.vstack(rows_hi).tocsr(), tol, labels,
                    slow_lo, slow_hi, slow_mid)


def _solve(prog: _Program, c):
    C = prog.grid.n_cells
    A_ub = sparse.vstack([prog.lower, -prog.upper]).tocsc()
    b_ub = np.full(A_ub.shape[0], prog.tol)
    # the default 1e-7 feasibility tolerance lets stray weights of that size
    # through the support threshold; 1e-9 matches the membership slack
    opts = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}
    for method in ("highs-ds", "highs-ipm"):
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=np.ones((1, C)), b_eq=[1.0],
                      bounds=(0, None), method=method, options=opts)
        if res.status in (0, 2):       # otherwise numerical trouble: retry interior point
            break
    if res.status == 2:
        raise ResolutionError(
            f"invariant-measure program infeasible on a grid of width {prog.grid.cell_width:g} at tol {prog.tol:g}; "
            "refine the grid or loosen the tolerance"
        )
    if res.status != 0:
        raise ResolutionError(f"linear program failed: {res.message}")
    w = np.clip(res.x, 0.0, None)
    return w / w.sum(), float(res.fun)


# ---------------------------------------------------------------------------
# invariant measure sets


@dataclass
class InvariantMeasureSet:
    """J_y, either exact (Diracs at equilibria) or as an LP polytope over cells."""

    y: np.ndarray
    representation: str
    extreme_points: list
    roots: Optional[np.ndarray] = None
    grid: Optional[FastGrid] = None
    cell_weights: list = field(default_factory=list)
    program: Optional[_Program] = None

    def supports(self, threshold: float = SUPPORT_THRESHOLD) -> list:
        """Cell multi-indices carrying mass, per extreme point (LP only)."""
        if self.grid is None:
            raise UnsupportedError("supports are defined for the grid representation")
        idx = self.grid.multi_index()
        return [idx[w > threshold] for w in self.cell_weights]

    def contains(self, weights) -> bool:
        """Whether cell weights satisfy every constraint of the program."""
        if self.program is None:
            raise UnsupportedError("membership test needs the grid representation")
        return self.program.feasible(weights)


def invariant_measures_exact(inst: ProblemInstance, y, interval=None, resolution=None) -> InvariantMeasureSet:
    """1-D J_y: its extreme points are the Diracs at the equilibria of h*(., y)."""
    roots = equilibria_1d(inst, y, interval, resolution)
    if roots.size == 0:
        raise ResolutionError("no equilibrium found in the interval; widen it")
    return InvariantMeasureSet(np.asarray(y, dtype=float).reshape(inst.s), "exact",
                               [AtomMeasure.dirac([r]) for r in roots], roots=roots)


def invariant_measures_lp(inst: ProblemInstance, y, grid: Optional[FastGrid] = None,
                          family: Optional[TestFunctionFamily] = None, tol: float = 1e-10,
                          n_objectives: int = 16, seed: int = 0, sweep: int = 9, bump_radius_cells: float = 2.0,
                          subsamples: Optional[int] = None, local: Optional[LocalFamily] = None,
                          ) -> InvariantMeasureSet:
    """Grid LP approximation of J_y with extreme points from linear objectives.

    The constraints use the degree-4 monomials (``family``) together with a
    bump family centered on the cells (``local``).  Objectives are squared
    distances to a ``sweep``-per-axis lattice of points across the box, plus
    ``n_objectives`` random directions drawn from ``seed``.  With no
    objectives only feasibility is established.
    """
    if grid is None:
        grid = FastGrid.over_box(inst.box_x, default_cell_width(inst))
    if family is None:
        family = MonomialFamily(inst.box_x, 4)
    if local is None and bump_radius_cells > 0:
        local = default_local_family(inst, grid, bump_radius_cells)
    k = subsamples or (9 if inst.d == 1 else 5)
    prog = _assemble(inst, y, grid, family, local, tol, k)
    centers = grid.centers()
    objectives = []
    box = np.asarray(inst.box_x, dtype=float)
    for q in itertools.product(*(np.linspace(lo, hi, sweep) for lo, hi in box)):
        objectives.append(((centers - np.array(q)) ** 2).sum(axis=1))
    rng = np.random.default_rng(seed)
    objectives += list(rng.standard_normal((n_objectives, grid.n_cells)))
    if not objectives:
        objectives = [np.zeros(grid.n_cells)]
    found, weights = [], []
    for c in objectives:
        w, _ = _solve(prog, c)
        w = np.where(w > SUPPORT_THRESHOLD, w, 0.0)
        w = w / w.sum()
        if not any(np.abs(w - v).max() < 1e-9 for v in weights):
            weights.append(w)
    for w in weights:
        keep = w > 0
        found.append(AtomMeasure(centers[keep], w[keep] / w[keep].sum()))
    return InvariantMeasureSet(np.asarray(y, dtype=float).reshape(inst.s), "lp", found, grid=grid,
                               cell_weights=weights, program=prog)


def invariant_measures(inst: ProblemInstance, y, method: str = "auto", **kw) -> InvariantMeasureSet:
    if method == "auto":
        method = "exact" if inst.d == 1 else "lp"
    if method == "exact":
        return invariant_measures_exact(inst, y, **kw)
    if method == "lp":
        return invariant_measures_lp(inst, y, **kw)
    raise InputError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# set-valued slow drift


@dataclass(frozen=True)
class HRange:
    lo: np.ndarray
    hi: np.ndarray
    vertices: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def h_range(inst: ProblemInstance, y, jset: InvariantMeasureSet) -> HRange:
    """Range of ``int sum_z pi(z) g(x, y, z) eta(dx)`` over eta in J_y.

    For a grid set each coordinate is extremized by a pair of LPs over the
    feasible polytope using cell brackets of the integrand; vertices are the
    drifts of the stored extreme points.
    """
    y = np.asarray(y, dtype=float).reshape(inst.s)
    verts = np.array([averaged_slow_integrand(inst, m.points, y[None, :]).T @ m.weights
                      for m in jset.extreme_points]).reshape(-1, inst.s)
    if jset.representation == "exact":
        return HRange(verts.min(axis=0), verts.max(axis=0), verts)
    prog = jset.program
    lo = np.array([_solve(prog, prog.slow_lo[:, k])[1] for k in range(inst.s)])
    hi = np.array([-_solve(prog, -prog.slow_hi[:, k])[1] for k in range(inst.s)])
    return HRange(lo, hi, verts)


@dataclass
class InclusionModel:
    """Interval-valued slow drift sampled on a grid over the (one-dimensional) y box."""

    centers: np.ndarray
    cell_width: float
    h_min: np.ndarray
    h_max: np.ndarray
    eps: float
    T_min: float
    instance_name: str = ""
    graph: Optional[nx.DiGraph] = None

    @property
    def origin(self) -> float:
        return float(self.centers[0] - 0.5 * self.cell_width)

    def cell_of(self, y) -> np.ndarray:
        return np.floor((np.asarray(y, dtype=float) - self.origin) / self.cell_width).astype(np.int64)

    def selection(self, which: str):
        vals = {"min": self.h_min, "max": self.h_max, "mid": 0.5 * (self.h_min + self.h_max)}[which]
        return lambda y: np.interp(y, self.centers, vals)


def build_inclusion(inst: ProblemInstance, n_cells: int = DEFAULT_SLOW_CELLS, method: str = "auto",
                    eps_cells: float = DEFAULT_EPS_CELLS, T_min: float = DEFAULT_T_MIN, **kw) -> InclusionModel:
    """Evaluate H at the centers of ``n_cells`` slow cells."""
    if inst.s != 1:
        raise UnsupportedError("the inclusion grid is implemented for s = 1")
    if not (eps_cells > 0 and T_min > 0):
        raise InputError("eps and T_min must be positive")
    lo, hi = inst.box_y[0]
    w = (hi - lo) / n_cells
    centers = lo + (np.arange(n_cells) + 0.5) * w
    hmin, hmax = np.empty(n_cells), np.empty(n_cells)
    if method == "lp" or (method == "auto" and inst.d > 1):
        kw = {"n_objectives": 0, "sweep": 0, **kw}
    for i, yc in enumerate(centers):
        r = h_range(inst, [yc], invariant_measures(inst, [yc], method, **kw))
        hmin[i], hmax[i] = r.lo[0], r.hi[0]
    return InclusionModel(centers, w, hmin, hmax, eps_cells * w, float(T_min), inst.name)


@dataclass
class ChainClasses:
    classes: list           # arrays of cell indices
    graph: nx.DiGraph
    model: InclusionModel

    def class_of(self) -> np.ndarray:
        out = np.full(len(self.model.centers), -1, dtype=int)
        for k, c in enumerate(self.classes):
            out[c] = k
        return out

    def cells(self) -> np.ndarray:
        return np.sort(np.concatenate(self.classes)) if self.classes else np.array([], dtype=int)


def reachability_graph(model: InclusionModel, n_starts: int = 3, dt: Optional[float] = None) -> nx.DiGraph:
    """Edges c -> c' when an Euler path of duration T_min with a fixed selection
    (H endpoints or midpoint), started in c, lands within eps of the center of c'."""
    n = len(model.centers)
    w = model.cell_width
    offs = (np.arange(n_starts) + 0.5) / n_starts - 0.5
    starts = (model.centers[:, None] + offs[None, :] * w).ravel()
    src = np.repeat(np.arange(n), n_starts)
    if dt is None:
        vmax = max(np.abs(model.h_min).max(), np.abs(model.h_max).max(), 1e-12)
        dt = min(model.T_min / 50, 0.5 * w / vmax)
    steps = int(math.ceil(model.T_min / dt - 1e-12))
    h = model.T_min / steps
    G = nx.DiGraph()
    G.add_nodes_from(range(n))
    lo, hi = model.centers[0] - 0.5 * w, model.centers[-1] + 0.5 * w
    reach = int(math.floor(model.eps / w)) + 1
    for which in ("min", "mid", "max"):
        f = model.selection(which)
        y = starts.copy()
        for _ in range(steps):
            y = y + h * f(y)
        inside = (y >= lo) & (y <= hi)
        base = model.cell_of(y)
        for off in range(-reach, reach + 1):
            tgt = base + off
            ok = inside & (tgt >= 0) & (tgt < n)
            ok[ok] &= np.abs(model.centers[tgt[ok]] - y[ok]) <= model.eps
            G.add_edges_from(zip(src[ok].tolist(), tgt[ok].tolist()))
    return G


def chain_recurrent_set(model: InclusionModel, n_starts: int = 3) -> ChainClasses:
    """Chain classes: cells on cycles of the reachability graph (strongly
    connected components with an internal edge), grouped into runs whose
    gaps do not exceed eps."""
    G = reachability_graph(model, n_starts)
    model.graph = G
    recurrent = set()
    for comp in nx.strongly_connected_components(G):
        if len(comp) > 1 or any(G.has_edge(c, c) for c in comp):
            recurrent |= comp
    # components closer than eps are not separated at this resolution
    gap = int(math.floor(model.eps / model.cell_width + 1e-9))
    cells = sorted(recurrent)
    classes, run = [], []
    for c in cells:
        if run and c - run[-1] > gap:
            classes.append(np.array(run, dtype=int))
            run = []
        run.append(c)
    if run:
        classes.append(np.array(run, dtype=int))
    return ChainClasses(classes, G, model)


@dataclass(frozen=True)
class LimitPointReport:
    fraction: float
    contained: bool
    offending_mass: float
    n_tail: int
    threshold: float = 0.95

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "contained": self.contained, "offending_mass": self.offending_mass,
                "n_tail": self.n_tail, "threshold": self.threshold,
                "note": "finite-run tail containment; approximates the limit-point statement"}


def check_limit_points(record: TrajectoryRecord, classes: ChainClasses, tail_fraction: float = 0.1,
                       threshold: float = 0.95) -> LimitPointReport:
    """Fraction of tail samples y(n) within one slow cell of some chain class."""
    if not 0 < tail_fraction <= 1:
        raise InputError("tail fraction must be in (0, 1]")
    n_tail = int(math.floor(tail_fraction * len(record.n)))
    if n_tail < 1000:
        raise InputError(f"tail holds {n_tail} samples; at least 1000 are needed")
    y = record.y[-n_tail:, 0]
    member = np.zeros(len(classes.model.centers) + 2, dtype=bool)
    cells = classes.cells()
    for off in (-1, 0, 1):
        idx = cells + off + 1
        member[idx[(idx >= 0) & (idx < member.size)]] = True
    c = classes.model.cell_of(y) + 1
    ok = (c >= 0) & (c < member.size)
    hit = np.zeros(n_tail, dtype=bool)
    hit[ok] = member[c[ok]]
    frac = float(hit.mean())
    return LimitPointReport(frac, frac >= threshold, 1.0 - frac, n_tail, threshold)


@dataclass(frozen=True)
class USCReport:
    y_seq: np.ndarray
    residuals: np.ndarray
    tol: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residuals <= self.tol))


def usc_probe(inst: ProblemInstance, y_seq: Sequence, y_inf, tol=None, method: str = "auto",
              member: int = 0, family: Optional[TestFunctionFamily] = None) -> USCReport:
    """Take a member of J_{y_n} for each y_n and measure its averaged residual at y_inf.

    ``tol`` is a scalar or one value per y_n; by default it is
    ``10 |y_n - y_inf| + 1e-8`` (exact) or that plus a grid allowance (LP).
    """
    y_inf = np.asarray(y_inf, dtype=float).reshape(inst.s)
    family = MonomialFamily(inst.box_x, 4) if family is None else family
    ys = [np.asarray(v, dtype=float).reshape(inst.s) for v in y_seq]
    res = []
    allowance = 0.0
    for yn in ys:
        jset = invariant_measures(inst, yn, method)
        eta = jset.extreme_points[min(member, len(jset.extreme_points) - 1)]
        if jset.grid is not None:
            allowance = jset.grid.cell_width
        grads = family.gradients(eta.points)
        hs = averaged_fast_field(inst, eta.points, y_inf[None, :])
        res.append(float(np.abs(np.einsum("fmd,md,m->f", grads, hs, eta.weights)).max()))
    dist = np.array([np.abs(yn - y_inf).max() for yn in ys])
    if tol is None:
        tol = 10 * dist + 1e-8 + 10 * allowance
    tol = np.broadcast_to(np.asarray(tol, dtype=float), dist.shape).copy()
    return USCReport(np.array(ys), np.array(res), tol)


# ---------------------------------------------------------------------------
# emitters


def write_inclusion_csv(path, model: InclusionModel, classes: Optional[ChainClasses] = None) -> None:
    ids = classes.class_of() if classes is not None else np.full(len(model.centers), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_center", "H_min", "H_max", "class_id"])
        for c, a, b, k in zip(model.centers, model.h_min, model.h_max, ids):
            w.writerow([repr(float(c)), repr(float(a)), repr(float(b)), int(k)])


def chain_report(classes: ChainClasses) -> dict:
    m = classes.model
    return {
        "instance": m.instance_name,
        "n_cells": len(m.centers),
        "cell_width": m.cell_width,
        "eps": m.eps,
        "T_min": m.T_min,
        "n_edges": classes.graph.number_of_edges(),
        "classes": [
            {"id": k, "cells": c.tolist(), "y_min": float(m.centers[c[0]] - m.cell_width / 2),
             "y_max": float(m.centers[c[-1]] + m.cell_width / 2)}
            for k, c in enumerate(classes.classes)
        ],
    }


def write_chain_json(path, classes: ChainClasses) -> None:
    with open(path, "w") as fh:
        json.dump(chain_report(classes), fh, indent=2, sort_keys=True)
        fh.write("\n")
