"""Coupled two-time-scale iterates driven by Markov and martingale noise.

    x(n+1) = x(n) + a(n) [h(x(n), y(n), Z(n)) + M(n+1)]
    y(n+1) = y(n) + b(n) [g(x(n), y(n), Z(n)) + M'(n+1)]
    Z(n+1) ~ p_{x(n), y(n)}(. | Z(n))

Each seed owns two independent generators (martingale noise, Markov
uniforms) spawned from ``SeedSequence(seed)``.  Draws are consumed in the
same order whether a run goes through :func:`step` one iteration at a time
or through the vectorized batch loop, so both paths are bit-identical.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DivergenceError, InputError, ScheduleError, StabilityViolation, TTSAError
from .fields import ProblemInstance

log = logging.getLogger(__name__)

FLAG_NAMES = ("robbins_monro_a", "robbins_monro_b", "square_summable", "ratio_vanishes")
DEFAULT_BUDGET = 1e3
BINARY_MAGIC = b"TTSA"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHHHQ")


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class PowerLaw:
    """Step sizes ``c * (n + 1) ** (-p)``."""

    c: float = 1.0
    p: float = 0.6

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise InputError("power-law scale must be positive")
        if not np.isfinite(self.p):
            raise InputError("power-law exponent must be finite")

    def values(self, N: int) -> np.ndarray:
        return self.c * (np.arange(N, dtype=float) + 1.0) ** (-self.p)

    def at(self, n: int) -> float:
        # through the array ufunc so it matches values() bit for bit
        return float((self.c * np.array([n + 1.0]) ** (-self.p))[0])


@dataclass(frozen=True)
class TableSchedule:
    """Explicit step-size table; only the first ``len(table)`` steps exist."""

    table: tuple

    def __post_init__(self):
        arr = np.asarray(self.table, dtype=float)
        if arr.ndim != 1 or arr.size < 2 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise InputError("step table must be a finite positive 1-d sequence")
        object.__setattr__(self, "table", tuple(arr.tolist()))

    def values(self, N: int) -> np.ndarray:
        if N > len(self.table):
            raise InputError(f"step table has {len(self.table)} entries, {N} requested")
        return np.asarray(self.table[:N], dtype=float)

    def at(self, n: int) -> float:
        return self.table[n]

    def tail_exponent(self) -> float:
        """Least-squares decay exponent over the second half of the table."""
        arr = np.asarray(self.table)
        n = np.arange(arr.size) + 1.0
        half = min(arr.size // 2, arr.size - 2)
        slope = np.polyfit(np.log(n[half:]), np.log(arr[half:]), 1)[0]
        return float(-slope)


ScheduleSpec = Union[PowerLaw, TableSchedule]


@dataclass(frozen=True)
class StepSchedule:
    a_spec: ScheduleSpec
    b_spec: ScheduleSpec
    flags: dict = field(default_factory=dict)
    horizon: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def a(self, N: int) -> np.ndarray:
        return self._values("a", N)

    def b(self, N: int) -> np.ndarray:
        return self._values("b", N)

    def _values(self, which, N):
        key = (which, N)
        if key not in self._cache:
            spec = self.a_spec if which == "a" else self.b_spec
            arr = spec.values(N)
            arr.setflags(write=False)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = arr
        return self._cache[key]

    @property
    def valid(self) -> bool:
        return all(self.flags.get(k, False) for k in FLAG_NAMES)


def _flags_from_exponents(pa, pb):
    return {
        "robbins_monro_a": pa <= 1.0,
        "robbins_monro_b": pb <= 1.0,
        "square_summable": pa > 0.5 and pb > 0.5,
        "ratio_vanishes": pb > pa,
    }


def validate_schedule(a_spec: ScheduleSpec, b_spec: ScheduleSpec, N: Optional[int] = None, strict: bool = True) -> StepSchedule:
    """Set the Robbins-Monro and time-scale separation flags.

    Power laws are decided by p-series tests.  Tables are judged by their
    fitted tail exponent over the horizon, which cannot certify a tail, so
    a warning is issued.  With ``strict`` a failed flag raises
    :class:`ScheduleError` naming it.
    """
    if isinstance(a_spec, PowerLaw) and isinstance(b_spec, PowerLaw):
        flags = _flags_from_exponents(a_spec.p, b_spec.p)
        # equal exponents with c_b < c_a still give b/a constant, not o(1)
    else:
        pa = a_spec.p if isinstance(a_spec, PowerLaw) else a_spec.tail_exponent()
        pb = b_spec.p if isinstance(b_spec, PowerLaw) else b_spec.tail_exponent()
        flags = _flags_from_exponents(pa, pb)
        warnings.warn("schedule flags for step tables are estimated over the table horizon; tail behaviour is unverifiable", stacklevel=2)
        if N is not None:
            for spec in (a_spec, b_spec):
                spec.values(N)
    failed = [k for k in FLAG_NAMES if not flags[k]]
    if strict and failed:
        raise ScheduleError(failed)
    return StepSchedule(a_spec, b_spec, flags, N)


def default_schedule() -> StepSchedule:
    return validate_schedule(PowerLaw(1.0, 0.6), PowerLaw(1.0, 0.9))


# ---------------------------------------------------------------------------
# martingale noise


@dataclass(frozen=True)
class NoiseModel:
    """Martingale difference noise.

    ``gaussian`` draws i.i.d. ``N(0, sigma^2)`` components, independent of
    the past, so ``E[|M|^2 + |M'|^2 | F_n] = sigma^2 (d + s)``, which is
    below the envelope ``K (1 + |x|^2 + |y|^2)`` with ``K = sigma^2 (d + s)``.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise InputError(f"unknown noise kind {self.kind!r}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise InputError("sigma must be a nonnegative real")

    @property
    def active(self) -> bool:
        return self.kind == "gaussian"

    def envelope_constant(self, d: int, s: int) -> float:
        return self.sigma ** 2 * (d + s) if self.active else 0.0


def generate_martingale_noise(model: NoiseModel, x, y, rng: np.random.Generator):
    """One draw of ``(M(n+1), M'(n+1))`` at the current state."""
    d, s = np.size(x), np.size(y)
    if not model.active:
        return np.zeros(d), np.zeros(s)
    v = rng.standard_normal(d + s) * model.sigma
    return v[:d], v[d:]


# ---------------------------------------------------------------------------
# state and single steps


@dataclass
class NoiseStreams:
    noise: np.random.Generator
    markov: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "NoiseStreams":
        noise_ss, markov_ss = np.random.SeedSequence(seed).spawn(2)
        return cls(np.random.default_rng(noise_ss), np.random.default_rng(markov_ss))


@dataclass(frozen=True)
class SAState:
    n: int
    x: np.ndarray
    y: np.ndarray
    z: int
    rng: NoiseStreams


def initial_state(inst: ProblemInstance, seed: int, x0=None, y0=None, z0=None) -> SAState:
    x = inst.x0 if x0 is None else np.asarray(x0, dtype=float).reshape(inst.d)
    y = inst.y0 if y0 is None else np.asarray(y0, dtype=float).reshape(inst.s)
    z = inst.z0 if z0 is None else int(z0)
    if not 0 <= z < inst.n_states:
        raise InputError(f"initial noise state {z} out of range")
    return SAState(0, x.copy(), y.copy(), z, NoiseStreams.from_seed(seed))


def step(inst: ProblemInstance, schedule: StepSchedule, state: SAState, model: NoiseModel) -> SAState:
    """Advance one iteration; the kernel is evaluated at the pre-update (x, y)."""
    n = state.n
    an = schedule.a_spec.at(n)
    bn = schedule.b_spec.at(n)
    M, Mp = generate_martingale_noise(model, state.x, state.y, state.rng.noise)
    u = state.rng.markov.random()
    z = np.asarray(state.z)
    hv = inst.h(state.x, state.y, z)
    gv = inst.g(state.x, state.y, z)
    z_next = int(inst.kernel.sample(state.x, state.y, z, u))
    x = state.x + an * (hv + M)
    y = state.y + bn * (gv + Mp)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DivergenceError(n)
    return SAState(n + 1, x, y, z_next, state.rng)


# ---------------------------------------------------------------------------
# trajectory records


@dataclass(frozen=True)
class TrajectoryRecord:
    """Stored samples of a run: step indices ``n`` with ``x``, ``y``, ``z``."""

    instance_name: str
    seed: int
    schedule: StepSchedule
    n: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    stride: int = 1
    sup_norm: float = float("nan")
    model: NoiseModel = NoiseModel()

    def __post_init__(self):
        if not (len(self.n) == len(self.x) == len(self.y) == len(self.z)):
            raise InputError("record arrays disagree in length")
        for a in (self.n, self.x, self.y, self.z):
            a.setflags(write=False)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def s(self) -> int:
        return self.y.shape[1]

    @property
    def N(self) -> int:
        return int(self.n[-1])

    def index_of(self, n: int) -> int:
        """Position of step ``n`` among the stored samples."""
        i = int(np.searchsorted(self.n, n))
        if i >= len(self.n) or self.n[i] != n:
            raise InputError(f"step {n} is not stored in this record (stride {self.stride})")
        return i

    def relabeled(self, perm) -> "TrajectoryRecord":
        """Record with noise states renamed consistently with ``permute_states(inst, perm)``."""
        inv = np.argsort(np.asarray(perm))
        return TrajectoryRecord(self.instance_name + "-relabeled", self.seed, self.schedule, self.n.copy(),
                                self.x.copy(), self.y.copy(), inv[self.z], self.stride, self.sup_norm, self.model)

    def columns(self) -> list[str]:
        return ["n"] + [f"x_{i}" for i in range(self.d)] + [f"y_{i}" for i in range(self.s)] + ["z"]

    def to_csv(self, path) -> None:
        table = np.column_stack([self.n, self.x, self.y, self.z])
        fmt = ["%d"] + ["%.17g"] * (self.d + self.s) + ["%d"]
        np.savetxt(path, table, fmt=fmt, delimiter=",", header=",".join(self.columns()), comments="")

    def to_binary(self, path) -> None:
        """Cache layout: header (magic, version u16, d u16, s u16, rows u64), then
        ``rows`` little-endian float64 rows of ``(n, x..., y..., z)``."""
        rows = np.column_stack([self.n, self.x, self.y, self.z]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, self.d, self.s, rows.shape[0]))
            fh.write(rows.tobytes())

    @staticmethod
    def read_binary(path):
        """Arrays ``(n, x, y, z)`` from a binary cache."""
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise InputError(f"{path}: truncated header")
            magic, version, d, s, rows = _HEADER.unpack(head)
            if magic != BINARY_MAGIC or version != BINARY_VERSION:
                raise InputError(f"{path}: not a TTSA cache (magic {magic!r}, version {version})")
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != rows * (d + s + 2):
            raise InputError(f"{path}: payload size mismatch")
        data = data.reshape(rows, d + s + 2)
        return (data[:, 0].astype(np.int64), data[:, 1:1 + d].copy(), data[:, 1 + d:1 + d + s].copy(),
                data[:, -1].astype(np.int64))

    @staticmethod
    def read_csv(path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        with open(path) as fh:
            cols = fh.readline().strip().split(",")
        d = sum(c.startswith("x_") for c in cols)
        return (data[:, 0].astype(np.int64), data[:, 1:1 + d], data[:, 1 + d:-1], data[:, -1].astype(np.int64))

    @classmethod
    def load(cls, path, schedule, seed, instance_name="", stride=1, model=NoiseModel()) -> "TrajectoryRecord":
        path = Path(path)
        reader = cls.read_binary if path.suffix == ".ttsa" else cls.read_csv
        n, x, y, z = reader(path)
        sup = float(np.max(np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)))
        return cls(instance_name, seed, schedule, n, x, y, z, stride, sup, model)


def _norm(v):
    if v.shape[1] == 1:
        return np.abs(v[:, 0])
    return np.sqrt((v * v).sum(axis=1))


def default_stride(N: int) -> int:
    return 1 if N < 10 ** 6 else 10


@dataclass
class BatchResult:
    records: dict
    failures: dict

    def ordered(self, seeds):
        return [self.records[s] for s in seeds]


def run_batch(inst: ProblemInstance, schedule: StepSchedule, N: int, seeds, model: NoiseModel = NoiseModel(),
              budget: float = DEFAULT_BUDGET, stride: Optional[int] = None, x0=None, y0=None, z0=None,
              block: int = 4096) -> BatchResult:
    """Run several seeds in lockstep.  A seed that violates the stability
    budget or diverges is dropped and reported in ``failures``; the other
    seeds continue."""
    if N < 1:
        raise InputError("N must be at least 1")
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise InputError("seeds must be distinct")
    stride = default_stride(N) if stride is None else int(stride)
    d, s, K = inst.d, inst.s, len(seeds)
    states = [initial_state(inst, sd, x0, y0, z0) for sd in seeds]
    a = schedule.a(N)
    b = schedule.b(N)

    stored = np.arange(0, N + 1, stride)
    if stored[-1] != N:
        stored = np.append(stored, N)
    m = stored.size
    X = np.empty((K, m, d))
    Y = np.empty((K, m, s))
    Z = np.empty((K, m), dtype=np.int64)
    x = np.stack([st.x for st in states])
    y = np.stack([st.y for st in states])
    z = np.array([st.z for st in states], dtype=np.int64)
    X[:, 0], Y[:, 0], Z[:, 0] = x, y, z
    sup = np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)
    alive = np.arange(K)
    failures = {}
    slot = 1

    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, N, block):
            B = min(block, N - start)
            if model.active:
                noise = np.stack([states[i].rng.noise.standard_normal((B, d + s)) for i in alive]) * model.sigma
            else:
                noise = np.zeros((alive.size, B, d + s))
            u = np.stack([states[i].rng.markov.random(B) for i in alive])
            Mx, My = noise[..., :d], noise[..., d:]
            for j in range(B):
                n = start + j
                hv = inst.h(x, y, z)
                gv = inst.g(x, y, z)
                z_next = inst.kernel.sample(x, y, z, u[:, j])
                x = x + a[n] * (hv + Mx[:, j])
                y = y + b[n] * (gv + My[:, j])
                z = z_next
                val = _norm(x) + _norm(y)
                bad = ~(val <= budget)
                if bad.any():
                    for k in np.nonzero(bad)[0]:
                        sd = seeds[alive[k]]
                        if np.isfinite(val[k]):
                            failures[sd] = StabilityViolation(n + 1, float(val[k]), budget, sd)
                        else:
                            failures[sd] = DivergenceError(n, sd)
                        log.warning("seed %d dropped: %s", sd, failures[sd])
                    keep = ~bad
                    alive, x, y, z, val = alive[keep], x[keep], y[keep], z[keep], val[keep]
                    Mx, My, u = Mx[keep], My[keep], u[keep]
                    if alive.size == 0:
                        return BatchResult({}, failures)
                sup[alive] = np.maximum(sup[alive], val)
                if slot < m and stored[slot] == n + 1:
                    X[alive, slot], Y[alive, slot], Z[alive, slot] = x, y, z
                    slot += 1

    records = {}
    for i in alive:
        sd = seeds[i]
        records[sd] = TrajectoryRecord(inst.name, sd, schedule, stored.copy(), X[i].copy(), Y[i].copy(),
                                       Z[i].copy(), stride, float(sup[i]), model)
    return BatchResult(records, failures)


def run_iterates(inst: ProblemInstance, schedule: StepSchedule, N: int, seed: int, model: NoiseModel = NoiseModel(),
                 budget: float = DEFAULT_BUDGET, stride: Optional[int] = None, x0=None, y0=None, z0=None) -> TrajectoryRecord:
    """Single seed run with stability monitoring.

    The stability assumption is only monitored: exceeding ``budget`` raises
    :class:`StabilityViolation` instead of projecting the iterates.
    """
    res = run_batch(inst, schedule, N, [seed], model, budget, stride, x0, y0, z0)
    if seed in res.failures:
        raise res.failures[seed]
    return res.records[seed]


def run_many(inst, schedule, N, seeds, model=NoiseModel(), **kw) -> list[TrajectoryRecord]:
    """Batch run that raises the first failure, for callers that need every seed."""
    res = run_batch(inst, schedule, N, seeds, model, **kw)
    if res.failures:
        raise next(iter(res.failures.values()))
    return res.ordered(seeds)


def noise_envelope_check(model: NoiseModel, states_x, states_y, n_draws: int, rng: np.random.Generator):
    """Monte Carlo conditional second moments at each state against the envelope.

    Returns ``(estimates, bounds, standard_errors)``.
    """
    est, se, bound = [], [], []
    K = model.envelope_constant(states_x.shape[1], states_y.shape[1])
    for x, y in zip(states_x, states_y):
        if model.active:
            # same stream as n_draws successive generate_martingale_noise calls
            v = rng.standard_normal((n_draws, x.size + y.size)) * model.sigma
            sq = (v * v).sum(axis=1)
        else:
            sq = np.zeros(n_draws)
        est.append(sq.mean())
        se.append(sq.std(ddof=1) / np.sqrt(n_draws) if n_draws > 1 else 0.0)
        bound.append(K * (1.0 + x @ x + y @ y))
    return np.array(est), np.array(bound), np.array(se)


__all__ = [
    "PowerLaw", "TableSchedule", "StepSchedule", "validate_schedule", "default_schedule", "NoiseModel",
    "generate_martingale_noise", "SAState", "initial_state", "step", "TrajectoryRecord", "run_batch",
    "run_iterates", "run_many", "BatchResult", "noise_envelope_check", "TTSAError", "FLAG_NAMES",
]
