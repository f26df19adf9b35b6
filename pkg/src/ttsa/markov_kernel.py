"""Parametrized transition kernels on a finite noise space.

A kernel maps a point ``(x, y)`` of the iterate space to a row-stochastic
matrix ``P`` with ``P[z, z'] = p_{x,y}(z' | z)``.  Everything here is
vectorized over leading batch axes so the engine can drive many seeds at
once, and all randomness is passed in by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import networkx as nx
import numpy as np

from ._numerics import fd_lipschitz, sample_box
from .errors import InputError, ModelDefinitionError, StructuralError

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-10


class NoiseKernel:
    """Transition kernel ``p_{x,y}(.|z)`` on ``range(n_states)``.

    ``matrix_fn(x, y)`` receives arrays of shape ``(..., d)`` and ``(..., s)``
    and returns ``(..., n_states, n_states)``.  Pass ``constant`` instead to
    get a kernel that ignores ``(x, y)``.
    """

    def __init__(self, n_states: int, matrix_fn: Optional[Callable] = None, constant=None, name: str = ""):
        if (matrix_fn is None) == (constant is None):
            raise ModelDefinitionError("give exactly one of matrix_fn or constant")
        self.n_states = int(n_states)
        self.name = name
        if constant is not None:
            constant = np.array(constant, dtype=float)
            if constant.shape != (self.n_states, self.n_states):
                raise ModelDefinitionError(f"constant kernel must be {self.n_states}x{self.n_states}")
            _check_stochastic(constant)
            constant.setflags(write=False)
        self.constant = constant
        self._matrix_fn = matrix_fn
        self._pi_cache = None
        self._cdf_cache = None

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def matrix(self, x, y) -> np.ndarray:
        """Batched transition matrices; no validation."""
        if self.constant is not None:
            batch = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
            return np.broadcast_to(self.constant, batch + self.constant.shape)
        return np.asarray(self._matrix_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))

    def rows(self, x, y, z) -> np.ndarray:
        """Rows ``p_{x,y}(.|z)`` for integer array ``z`` (same batch shape as x, y)."""
        z = np.asarray(z)
        if self.constant is not None:
            return self.constant[z]
        P = self.matrix(x, y)
        return np.take_along_axis(P, z[..., None, None], axis=-2)[..., 0, :]

    def sample(self, x, y, z, u) -> np.ndarray:
        """Vectorized inverse-CDF draw of the next states from uniforms ``u``."""
        if self.constant is not None:
            if self._cdf_cache is None:
                cdf = np.cumsum(self.constant, axis=-1)[:, :-1]
                cdf.setflags(write=False)
                self._cdf_cache = cdf
            return np.count_nonzero(np.asarray(u)[..., None] >= self._cdf_cache[z], axis=-1)
        return inverse_cdf(self.rows(x, y, z), u)

    def stationary(self, x, y) -> np.ndarray:
        """Batched stationary laws (..., n_states); irreducibility is not re-checked."""
        if self.constant is not None:
            if self._pi_cache is None:
                self._pi_cache = stationary_distribution(self.constant).pi
            batch = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
            return np.broadcast_to(self._pi_cache, batch + (self.n_states,))
        return stationary_many(self.matrix(x, y))

    def permuted(self, perm) -> "NoiseKernel":
        """Kernel of the relabeled chain ``z_new = perm_inverse[z_old]``.

        ``perm[new] = old``: new state ``k`` is old state ``perm[k]``.
        """
        perm = np.asarray(perm)
        if self.constant is not None:
            return NoiseKernel(self.n_states, constant=self.constant[np.ix_(perm, perm)], name=self.name)
        fn = self._matrix_fn
        return NoiseKernel(self.n_states, lambda x, y: fn(x, y)[..., perm, :][..., :, perm], name=self.name)


@dataclass(frozen=True)
class StationaryLaw:
    pi: np.ndarray
    residual: float

    def __post_init__(self):
        self.pi.setflags(write=False)


def _check_stochastic(P):
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise ModelDefinitionError("transition matrix has non-finite entries")
    if np.any(P < 0):
        raise ModelDefinitionError("transition matrix has negative entries")
    err = np.abs(P.sum(axis=-1) - 1.0).max()
    if err > ROW_TOL:
        raise ModelDefinitionError(f"transition rows do not sum to 1 (max error {err:.3g})")


def _check_point(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} must be finite")
    return np.atleast_1d(v)


def kernel_at(kernel: NoiseKernel, x, y) -> np.ndarray:
    """Row-stochastic matrix of the kernel at a single point ``(x, y)``."""
    x = _check_point(x, "x")
    y = _check_point(y, "y")
    P = np.array(kernel.matrix(x, y), dtype=float)
    if P.shape != (kernel.n_states, kernel.n_states):
        raise ModelDefinitionError(f"kernel returned shape {P.shape}, expected {(kernel.n_states,) * 2}")
    _check_stochastic(P)
    return P


def unreachable_states(P) -> list[int]:
    """States outside the strongly connected component of state 0."""
    P = np.asarray(P)
    G = nx.DiGraph()
    G.add_nodes_from(range(P.shape[0]))
    G.add_edges_from(zip(*np.nonzero(P > 0)))
    comp = next(c for c in nx.strongly_connected_components(G) if 0 in c)
    return sorted(set(range(P.shape[0])) - comp)


def check_irreducible(P) -> bool:
    """True iff the digraph of strictly positive entries is strongly connected."""
    P = np.asarray(P)
    G = nx.DiGraph()
    G.add_nodes_from(range(P.shape[0]))
    G.add_edges_from(zip(*np.nonzero(P > 0)))
    return nx.is_strongly_connected(G)


def stationary_many(P) -> np.ndarray:
    """Solve ``(P^T - I) pi = 0, sum(pi) = 1`` for a batch of matrices."""
    P = np.asarray(P, dtype=float)
    k = P.shape[-1]
    A = np.swapaxes(P, -1, -2) - np.eye(k)
    A = A.copy()
    A[..., -1, :] = 1.0
    rhs = np.zeros(P.shape[:-1])
    rhs[..., -1] = 1.0
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def stationary_distribution(P) -> StationaryLaw:
    """Unique stationary law of an irreducible row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    _check_stochastic(P)
    if not check_irreducible(P):
        bad = unreachable_states(P)
        raise StructuralError(f"transition matrix is reducible; states {bad} are not mutually reachable with state 0", bad)
    pi = stationary_many(P)
    # the solve can leave -1e-17 style entries on nearly absorbing chains
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    res = float(np.abs(pi @ P - pi).max())
    if res > STATIONARY_TOL:
        raise ModelDefinitionError(f"stationary solve residual {res:.3g} exceeds {STATIONARY_TOL}")
    return StationaryLaw(pi=pi, residual=res)


def inverse_cdf(rows, u) -> np.ndarray:
    """Smallest index j with u < cumsum(row)[j], vectorized over rows.

    The last cumulative sum is treated as +inf so rounding such as
    0.9999999999999999 < u cannot produce an out-of-range state.
    """
    cdf = np.cumsum(rows, axis=-1)
    return np.count_nonzero(np.asarray(u)[..., None] >= cdf[..., :-1], axis=-1)


def sample_next(kernel: NoiseKernel, x, y, z: int, u: float) -> int:
    """Next noise state by inverse CDF of ``p_{x,y}(.|z)`` at the uniform draw ``u``."""
    if not 0 <= z < kernel.n_states:
        raise InputError(f"state {z} outside 0..{kernel.n_states - 1}")
    if not 0.0 <= u < 1.0:
        raise InputError("u must lie in [0, 1)")
    P = kernel_at(kernel, x, y)
    return int(inverse_cdf(P[z], u))


def verify_kernel(kernel: NoiseKernel, box_x, box_y, n_samples=64, rng=None):
    """Stochasticity and irreducibility on random points of the working box.

    Run once per scenario instead of at every step.
    """
    rng = np.random.default_rng(12345) if rng is None else rng
    xs = sample_box(box_x, n_samples, rng)
    ys = sample_box(box_y, n_samples, rng)
    P = np.array(kernel.matrix(xs, ys), dtype=float)
    _check_stochastic(P)
    for i in range(n_samples):
        if not check_irreducible(P[i]):
            bad = unreachable_states(P[i])
            raise StructuralError(f"kernel reducible at x={xs[i]}, y={ys[i]}: states {bad}", bad)


def kernel_lipschitz(kernel: NoiseKernel, box_x, box_y, n_samples=100, delta=1e-6, rng=None) -> float:
    """Finite-difference estimate of the kernel's Lipschitz modulus (max-entry norm)."""
    d = np.shape(box_x)[0]
    box = np.vstack([box_x, box_y])
    return fd_lipschitz(lambda p: kernel.matrix(p[:, :d], p[:, d:]), box, n_samples, delta, rng)


def stationary_lipschitz(kernel: NoiseKernel, box_x, box_y, n_samples=100, delta=1e-6, rng=None) -> float:
    d = np.shape(box_x)[0]
    box = np.vstack([box_x, box_y])
    return fd_lipschitz(lambda p: kernel.stationary(p[:, :d], p[:, d:]), box, n_samples, delta, rng)
