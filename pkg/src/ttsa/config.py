"""Experiment configuration: a flat TOML file with an optional ``[instance]`` table.

Grammar (every key optional except ``scenario`` or ``[instance]``)::

    scenario = "S1"            # shipped scenario, or give an [instance] table
    steps = 10000              # N
    seeds = [0, 1, 2]
    a_coef = 1.0               # a(n) = a_coef * (n+1)^-a_exp
    a_exp = 0.6
    b_coef = 1.0
    b_exp = 0.9
    noise = "gaussian"         # or "none"
    sigma = 0.1
    analyses = ["deviation"]   # deviation, occupation, disintegration, inclusion, containment
    window = 5.0
    window_starts = [100, 10000]
    ...

``[instance]`` holds the keys accepted by
:func:`ttsa.fields.instance_from_expressions`.
"""
from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InputError, ScheduleError, UsageError
from .fields import SCENARIO_NAMES, ProblemInstance, instance_from_expressions, make_scenario
from .sa_engine import NoiseModel, PowerLaw, StepSchedule, validate_schedule

ANALYSES = ("deviation", "occupation", "disintegration", "inclusion", "containment")


@dataclass
class ExperimentConfig:
    scenario: Optional[str] = None
    instance: Optional[dict] = None
    steps: int = 10_000
    seeds: list = field(default_factory=lambda: [0])
    a_coef: float = 1.0
    a_exp: float = 0.6
    b_coef: float = 1.0
    b_exp: float = 0.9
    noise: str = "gaussian"
    sigma: float = 0.1
    budget: float = 1e3
    stride: int = 0                      # 0 picks the default thinning
    analyses: list = field(default_factory=lambda: ["deviation"])
    window: float = 5.0
    window_starts: list = field(default_factory=lambda: [100, 10_000])
    cell_width: float = 0.05
    fast_grid: float = 0.0               # 0 picks the per-dimension default
    slow_cells: int = 400
    eps_cells: float = 2.0
    t_min: float = 1.0
    lp_tol: float = 1e-10
    tail_fraction: float = 0.1
    containment_threshold: float = 0.95
    binary: bool = True
    out: str = "ttsa-run"

    # -- construction -----------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"{source}: {exc}", line=int(m.group(1)) if m else None) from exc
        lines = _key_lines(text)
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{source}: unknown key", key=key, line=lines.get(key))
            kwargs[key] = _coerce(key, value, known[key], lines.get(key), source)
        cfg = cls(**kwargs)
        cfg.validate(lines, source)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path))

    def to_text(self) -> str:
        data = {k: v for k, v in dataclasses.asdict(self).items() if v is not None and k != "instance"}
        if self.instance is not None:
            data["instance"] = self.instance
        return tomli_w.dumps(data)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})
        cfg.validate()
        return cfg

    # -- checks -----------------------------------------------------------

    def validate(self, lines=None, source="<config>") -> None:
        lines = lines or {}

        def fail(key, msg):
            raise ConfigError(f"{source}: {msg}", key=key, line=lines.get(key))

        if (self.scenario is None) == (self.instance is None):
            fail("scenario", "give exactly one of 'scenario' or an [instance] table")
        if self.scenario is not None and self.scenario not in SCENARIO_NAMES:
            try:
                make_scenario(self.scenario)
            except UsageError as exc:
                fail("scenario", str(exc))
        if self.steps < 1:
            fail("steps", "must be positive")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            fail("seeds", "must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            fail("seeds", "duplicate seeds")
        if self.noise not in ("none", "gaussian"):
            fail("noise", "must be 'none' or 'gaussian'")
        if self.sigma < 0:
            fail("sigma", "must be non-negative")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            fail("analyses", f"unknown analyses {bad}; choose from {list(ANALYSES)}")
        for key in ("window", "cell_width", "eps_cells", "t_min", "budget"):
            if not getattr(self, key) > 0:
                fail(key, "must be positive")
        if not 0 < self.tail_fraction <= 1:
            fail("tail_fraction", "must be in (0, 1]")
        try:
            self.schedule()
        except ScheduleError as exc:
            fail("b_exp" if exc.failed == ("robbins_monro_b",) else "a_exp", str(exc))
        if self.instance is not None:
            try:
                instance_from_expressions(self.instance)
            except (InputError, KeyError, TypeError, ValueError) as exc:
                fail("instance", f"invalid instance: {exc}")

    # -- derived objects --------------------------------------------------

    def schedule(self) -> StepSchedule:
        return validate_schedule(PowerLaw(self.a_coef, self.a_exp), PowerLaw(self.b_coef, self.b_exp))

    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.noise, self.sigma if self.noise == "gaussian" else 0.0)

    def problem(self) -> ProblemInstance:
        if self.instance is not None:
            return instance_from_expressions(self.instance, name=self.instance.get("name", "custom"))
        return make_scenario(self.scenario).instance

    def known_answers(self) -> dict:
        if self.scenario is None:
            return {}
        return make_scenario(self.scenario).known_answers


def _key_lines(text: str) -> dict:
    """Line numbers of top-level keys and table headers."""
    out = {}
    in_table = False
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[\s*([A-Za-z0-9_]+)\s*\]", s)
        if m:
            out.setdefault(m.group(1), i)
            in_table = True
            continue
        m = re.match(r"([A-Za-z0-9_]+)\s*=", s)
        if m and not in_table:
            out.setdefault(m.group(1), i)
    return out


def _coerce(key, value, fld, line, source):
    default = fld.default if fld.default is not dataclasses.MISSING else fld.default_factory()
    want = type(default) if default is not None else None
    if key == "scenario":
        want = str
    if key == "instance":
        want = dict

    def fail():
        raise ConfigError(f"{source}: expected {want.__name__}, got {value!r}", key=key, line=line)

    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if want in (str, bool, list, dict) and isinstance(value, want):
        return value
    fail()
