"""Problem instances, averaged vector fields and the shipped scenario library.

All evaluators broadcast over leading axes: ``h(x, y, z)`` takes ``x`` of
shape ``(..., d)``, ``y`` of shape ``(..., s)`` and an integer array ``z``
of the batch shape, and returns ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from ._numerics import fd_lipschitz
from .errors import InputError, UsageError
from .markov_kernel import NoiseKernel

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    d: int
    s: int
    h: Callable
    g: Callable
    kernel: NoiseKernel
    box_x: np.ndarray
    box_y: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    z0: int = 0

    def __post_init__(self):
        for attr, dim in (("box_x", self.d), ("box_y", self.s)):
            box = np.array(getattr(self, attr), dtype=float).reshape(dim, 2)
            object.__setattr__(self, attr, box)
        object.__setattr__(self, "x0", np.array(self.x0, dtype=float).reshape(self.d))
        object.__setattr__(self, "y0", np.array(self.y0, dtype=float).reshape(self.s))

    @property
    def n_states(self) -> int:
        return self.kernel.n_states


@dataclass(frozen=True)
class Scenario:
    instance: ProblemInstance
    known_answers: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AtomMeasure:
    """Finite probability measure ``sum_i w_i delta_{x_i}`` on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape[0] != w.shape[0]:
            raise InputError("points and weights disagree in length")
        if np.any(w < 0):
            raise InputError("negative atom weight")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InputError(f"atom weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, x):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), [1.0])

    def mix(self, other: "AtomMeasure", alpha: float) -> "AtomMeasure":
        return AtomMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([alpha * self.weights, (1 - alpha) * other.weights]),
        )


def _all_states(inst, batch_shape):
    return np.broadcast_to(np.arange(inst.n_states), batch_shape + (inst.n_states,))


def averaged_fast_field(inst: ProblemInstance, x, y) -> np.ndarray:
    """``sum_z h(x, y, z) pi_{x,y}(z)``, the drift of the frozen fast ODE."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("x and y must be finite")
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    x = np.broadcast_to(x, batch + (inst.d,))
    y = np.broadcast_to(y, batch + (inst.s,))
    pi = inst.kernel.stationary(x, y)
    hz = inst.h(x[..., None, :], y[..., None, :], _all_states(inst, batch))
    return np.einsum("...z,...zd->...d", pi, hz)


def averaged_slow_integrand(inst: ProblemInstance, x, y) -> np.ndarray:
    """``sum_z g(x, y, z) pi_{x,y}(z)`` pointwise in x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    x = np.broadcast_to(x, batch + (inst.d,))
    y = np.broadcast_to(y, batch + (inst.s,))
    pi = inst.kernel.stationary(x, y)
    gz = inst.g(x[..., None, :], y[..., None, :], _all_states(inst, batch))
    return np.einsum("...z,...zd->...d", pi, gz)


def averaged_slow_field(inst: ProblemInstance, y, eta: AtomMeasure) -> np.ndarray:
    """Slow drift ``int sum_z g(x, y, z) pi_{x,y}(z) eta(dx)`` against an atom measure."""
    if not isinstance(eta, AtomMeasure):
        raise InputError("eta must be an AtomMeasure")
    y = np.asarray(y, dtype=float).reshape(inst.s)
    vals = averaged_slow_integrand(inst, eta.points, y[None, :])
    return eta.weights @ vals


def field_lipschitz(inst: ProblemInstance, n_samples=100, delta=1e-6, rng=None) -> float:
    """Finite-difference Lipschitz estimate of the averaged fast field on the box."""
    box = np.vstack([inst.box_x, inst.box_y])
    d = inst.d
    return fd_lipschitz(lambda p: averaged_fast_field(inst, p[:, :d], p[:, d:]), box, n_samples, delta, rng)


def permute_states(inst: ProblemInstance, perm) -> ProblemInstance:
    """Same problem with noise states relabeled: new state k is old state perm[k]."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    h, g = inst.h, inst.g
    return replace(
        inst,
        name=inst.name + "-relabeled",
        h=lambda x, y, z: h(x, y, perm[z]),
        g=lambda x, y, z: g(x, y, perm[z]),
        kernel=inst.kernel.permuted(perm),
        z0=int(inv[inst.z0]),
    )


# ---------------------------------------------------------------------------
# scenario library


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _s1_h(x, y, z):
    return -(x - y - 0.5 * np.asarray(z)[..., None])


def _s1_g(x, y, z):
    return -(y - 0.5 * x)


def _s1() -> Scenario:
    P = [[0.9, 0.1], [0.2, 0.8]]
    inst = ProblemInstance(
        name="S1", d=1, s=1, h=_s1_h, g=_s1_g,
        kernel=NoiseKernel(2, constant=P, name="S1-constant"),
        box_x=[[-4.0, 4.0]], box_y=[[-3.0, 3.0]], x0=[0.0], y0=[0.0], z0=0,
    )
    known = {
        "pi": [2 / 3, 1 / 3],
        "x_star": [1 / 3],
        "y_star": [1 / 6],
        "kernel_lipschitz": 0.0,
        "slow_equilibria": [1 / 6],
    }
    notes = {
        "pi": "0.1 pi0 = 0.2 pi1 with pi0 + pi1 = 1",
        "lambda": "h* = -(x - y - E_pi[z]/2) = -(x - y - 1/6), so lambda(y) = y + 1/6",
        "y_star": "g(lambda(y), y) = -(y/2 - 1/12) = 0 gives y* = 1/6, x* = lambda(y*) = 1/3",
    }
    return Scenario(inst, known, notes)


def _s1b_p01(y):
    return np.clip(0.1 + 0.8 * _sigmoid(y[..., 0]), 0.05, 0.95)


def _s1b_matrix(x, y):
    p = _s1b_p01(y)
    P = np.empty(p.shape + (2, 2))
    P[..., 0, 0] = 1.0 - p
    P[..., 0, 1] = p
    P[..., 1, 0] = 0.5
    P[..., 1, 1] = 0.5
    return P


def _s1b() -> Scenario:
    inst = ProblemInstance(
        name="S1b", d=1, s=1, h=_s1_h, g=_s1_g,
        kernel=NoiseKernel(2, matrix_fn=_s1b_matrix, name="S1b-sigmoid"),
        box_x=[[-4.0, 4.0]], box_y=[[-3.0, 3.0]], x0=[0.0], y0=[0.0], z0=0,
    )

    def pi1(y):
        p = float(_s1b_p01(np.array([y])))
        return p / (p + 0.5)

    y_star = brentq(lambda y: -(y - 0.5 * (y + 0.5 * pi1(y))), -3.0, 3.0, xtol=1e-14)
    known = {
        "y_star": [y_star],
        "x_star": [y_star + 0.5 * pi1(y_star)],
        "kernel_lipschitz": 0.2,
    }
    notes = {
        "kernel_lipschitz": "rows change through 0.8*sigmoid'(y) <= 0.2 (clip is 1-Lipschitz)",
        "pi": "pi1(y) = p(y) / (p(y) + 0.5) with p(y) = p(1|0)",
        "lambda": "lambda(y) = y + pi1(y)/2",
        "y_star": "root of y = lambda(y)/2, found by bracketing on [-3, 3]",
    }
    return Scenario(inst, known, notes)


S2_SHIFT = 0.05


def _s2_h(x, y, z):
    shift = S2_SHIFT * (2.0 * np.asarray(z)[..., None] - 1.0)
    return -(x ** 3 - x - y) + shift


def _s2_g(x, y, z):
    return x - y


def _s2() -> Scenario:
    P = [[0.7, 0.3], [0.3, 0.7]]
    inst = ProblemInstance(
        name="S2", d=1, s=1, h=_s2_h, g=_s2_g,
        kernel=NoiseKernel(2, constant=P, name="S2-symmetric"),
        box_x=[[-3.0, 3.0]], box_y=[[-3.0, 3.0]], x0=[0.9], y0=[0.0], z0=0,
    )
    r2 = float(np.sqrt(2.0))
    known = {
        "pi": [0.5, 0.5],
        "equilibria_y0": [-1.0, 0.0, 1.0],
        "stability_y0": ["stable", "unstable", "stable"],
        "slow_equilibria": [-r2, 0.0, r2],
        "H_y0": [-1.0, 1.0],
        "x_star": [r2],
        "y_star": [r2],
        "kernel_lipschitz": 0.0,
    }
    notes = {
        "equilibria_y0": "symmetric kernel makes the +-0.05 shift average out; x^3 - x = 0",
        "slow_equilibria": "x = y on a root branch: y^3 - 2y = 0",
        "y_star": "from x(0) = 0.9 the fast iterate rides the upper branch, whose slow equilibrium is sqrt(2)",
        "H_y0": "g = x at y = 0, extremized over Diracs at the outer roots",
    }
    return Scenario(inst, known, notes)


S3_SPEED_MOD = 0.2


def _s3_radius(y):
    return 1.0 + 0.5 * y


def _s3_h(x, y, z):
    speed = 1.0 + S3_SPEED_MOD * (2.0 * np.asarray(z)[..., None] - 1.0)
    rot = np.stack([x[..., 1], -x[..., 0]], axis=-1)
    radial = _s3_radius(y) ** 2 - np.sum(x * x, axis=-1, keepdims=True)
    return speed * rot + radial * x


def _s3_g(x, y, z):
    return 2.0 - np.sum(x * x, axis=-1, keepdims=True) + 0.0 * y


def _s3() -> Scenario:
    P = [[0.8, 0.2], [0.2, 0.8]]
    inst = ProblemInstance(
        name="S3", d=2, s=1, h=_s3_h, g=_s3_g,
        kernel=NoiseKernel(2, constant=P, name="S3-symmetric"),
        box_x=[[-3.0, 3.0], [-3.0, 3.0]], box_y=[[-1.0, 3.0]], x0=[1.0, 0.0], y0=[0.0], z0=0,
    )
    known = {
        "y_star": [2.0 * (np.sqrt(2.0) - 1.0)],
        "cycle_radius_at_y_star": float(np.sqrt(2.0)),
        "kernel_lipschitz": 0.0,
    }
    notes = {
        "cycle": "the z-dependent term only changes angular speed; d|x|^2/dt = 2|x|^2 (r(y)^2 - |x|^2), r(y) = 1 + y/2",
        "y_star": "g averaged over the cycle is 2 - r(y)^2, zero at (1 + y/2)^2 = 2",
    }
    return Scenario(inst, known, notes)


_SCENARIOS = {"S1": _s1, "S1b": _s1b, "S2": _s2, "S3": _s3}
_ALIASES = {
    "contraction": "S1", "S1 contraction": "S1",
    "state-dependent-kernel": "S1b", "S1b state-dependent-kernel": "S1b",
    "double-well": "S2", "S2 double-well": "S2",
    "rotation": "S3", "S3 rotation": "S3",
}

SCENARIO_NAMES = tuple(_SCENARIOS)


def make_scenario(name: str) -> Scenario:
    key = _ALIASES.get(name, name)
    if key not in _SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    return _SCENARIOS[key]()


def cycle_radius(y):
    """Limit cycle radius of the S3 fast dynamics at slow value y."""
    return _s3_radius(np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# declarative instances


def instance_from_expressions(spec: dict, name: str = "custom") -> ProblemInstance:
    """Build an instance from expression strings.

    ``spec`` keys: ``d``, ``s``, ``n_states``, ``h`` (d strings), ``g``
    (s strings), ``kernel`` (n_states x n_states strings), ``box_x``,
    ``box_y``, optional ``x0``, ``y0``, ``z0``.  Expressions may use
    ``x0..x{d-1}``, ``y0..y{s-1}``, ``z`` (the latter not in the kernel) and
    numpy-style functions such as ``exp`` or ``sin``.
    """
    import sympy

    d, s, nz = int(spec["d"]), int(spec["s"]), int(spec["n_states"])
    xs = sympy.symbols([f"x{i}" for i in range(d)])
    ys = sympy.symbols([f"y{i}" for i in range(s)])
    zsym = sympy.Symbol("z")
    local = {str(v): v for v in (*xs, *ys, zsym)}

    def compile_vec(exprs, n, with_z=True):
        if len(exprs) != n:
            raise InputError(f"expected {n} expressions, got {len(exprs)}")
        args = (*xs, *ys, zsym) if with_z else (*xs, *ys)
        fns = [sympy.lambdify(args, sympy.sympify(e, locals=local), modules="numpy") for e in exprs]
        return fns

    hf = compile_vec(spec["h"], d)
    gf = compile_vec(spec["g"], s)
    kf = [compile_vec(row, nz, with_z=False) for row in spec["kernel"]]
    if len(kf) != nz:
        raise InputError(f"kernel must have {nz} rows")

    def stack(fns, x, y, z):
        args = [x[..., i] for i in range(d)] + [y[..., i] for i in range(s)]
        if z is not None:
            args.append(np.asarray(z, dtype=float))
        shape = np.broadcast_shapes(*(np.shape(a) for a in args))
        return np.stack([np.broadcast_to(np.asarray(f(*args), dtype=float), shape) for f in fns], axis=-1)

    def matrix(x, y):
        return np.stack([stack(row, x, y, None) for row in kf], axis=-2)

    return ProblemInstance(
        name=name, d=d, s=s,
        h=lambda x, y, z: stack(hf, x, y, z),
        g=lambda x, y, z: stack(gf, x, y, z),
        kernel=NoiseKernel(nz, matrix_fn=matrix, name=name + "-kernel"),
        box_x=spec["box_x"], box_y=spec["box_y"],
        x0=spec.get("x0", [0.0] * d), y0=spec.get("y0", [0.0] * s), z0=int(spec.get("z0", 0)),
    )
