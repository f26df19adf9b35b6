"""Experiment pipeline: simulate seeds, run the requested analyses, write
artifacts and a manifest, and summarize artifact directories."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import networkx
import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig
from .errors import (InputError, QueryError, ReportError, ResolutionError,
                     StabilityViolation, UnsupportedError)
from .invariants import (ChainClasses, FastGrid, build_inclusion, chain_recurrent_set, check_limit_points,
                         write_chain_json, write_inclusion_csv)
from .occupation import (default_family, disintegration_distance, stationarity_residual,
                         window_occupation_measure, write_measure_csv, write_residual_csv)
from .sa_engine import TrajectoryRecord, run_batch
from .timescale import deviation_curve, record_times, slow_deviation, write_deviation_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_INFEASIBLE = 4

MANIFEST = "manifest.json"


def seed_dir(out, seed: int) -> Path:
    return Path(out) / f"seed_{seed}"


def default_jobs() -> int:
    env = os.environ.get("TTSA_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer TTSA_JOBS=%r", env)
    return 1


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# per-seed analyses


def analyze_deviation(record, inst, cfg: ExperimentConfig, out: Path) -> dict:
    rows = deviation_curve(record, inst, cfg.window_starts, cfg.window)
    write_deviation_csv(out / "deviation.csv", rows)
    slow = []
    t = record_times(record, "slow")
    for n in cfg.window_starts:
        try:
            slow.append((float(t[record.index_of(int(n))]), slow_deviation(record, inst, int(n), cfg.window)))
        except (InputError, QueryError):
            continue
    write_deviation_csv(out / "slow_deviation.csv", slow)
    return {"fast_windows": len(rows), "slow_windows": len(slow)}


def _window_measures(record, inst, cfg, skipped=None):
    """Measures for the configured windows; windows the record does not cover
    are appended to ``skipped``."""
    for n in cfg.window_starts:
        try:
            yield int(n), window_occupation_measure(record, int(n), cfg.window, cfg.cell_width, origin=inst.box_x[:, 0])
        except InputError:
            if skipped is not None:
                skipped.append(int(n))


def analyze_occupation(record, inst, cfg: ExperimentConfig, out: Path) -> dict:
    family = default_family(inst)
    done, skipped = [], []
    for n, mu in _window_measures(record, inst, cfg, skipped):
        rep = stationarity_residual(mu, inst, family)
        write_residual_csv(out / f"residual_n{n}.csv", rep, family)
        write_measure_csv(out / f"measure_n{n}.csv", mu)
        done.append(n)
    return {"occupation_windows": done, "skipped_windows": skipped}


def analyze_disintegration(record, inst, cfg: ExperimentConfig, out: Path) -> dict:
    skipped = []
    windows = [{"n": n, "window_start": mu.window[0], "T": mu.window[1], "distance": disintegration_distance(mu, inst)}
               for n, mu in _window_measures(record, inst, cfg, skipped)]
    _write_json(out / "disintegration.json", {"cell_width": cfg.cell_width, "windows": windows})
    return {"disintegration_windows": [w["n"] for w in windows], "skipped_windows": skipped}


def analyze_containment(record, classes: ChainClasses, cfg: ExperimentConfig, out: Path) -> dict:
    rep = check_limit_points(record, classes, cfg.tail_fraction, cfg.containment_threshold)
    _write_json(out / "containment.json", rep.to_dict())
    return {"contained": rep.contained}


ANALYZERS = {
    "deviation": analyze_deviation,
    "occupation": analyze_occupation,
    "disintegration": analyze_disintegration,
}


def analyze_record(record, inst, cfg: ExperimentConfig, out: Path, classes: Optional[ChainClasses] = None) -> dict:
    info = {}
    for what in cfg.analyses:
        if what in ANALYZERS:
            info.update(ANALYZERS[what](record, inst, cfg, out))
        elif what == "containment" and classes is not None:
            info.update(analyze_containment(record, classes, cfg, out))
    return info


# ---------------------------------------------------------------------------
# running


def _simulate_chunk(cfg: ExperimentConfig, seeds, classes, out: str) -> dict:
    """Worker: simulate a group of seeds in lockstep and analyze each one."""
    inst = cfg.problem()
    res = run_batch(inst, cfg.schedule(), cfg.steps, seeds, cfg.noise_model(), budget=cfg.budget,
                    stride=cfg.stride or None)
    status = {}
    for seed in seeds:
        d = seed_dir(out, seed)
        d.mkdir(parents=True, exist_ok=True)
        if seed in res.failures:
            err = res.failures[seed]
            status[seed] = {"status": "stability_violation" if isinstance(err, StabilityViolation) else "divergence",
                            "message": str(err), "step": err.step}
            _write_json(d / "status.json", status[seed])
            continue
        rec = res.records[seed]
        rec.to_csv(d / "trajectory.csv")
        if cfg.binary:
            rec.to_binary(d / "trajectory.ttsa")
        entry = {"status": "ok"}
        try:
            entry.update(analyze_record(rec, inst, cfg, d, classes))
        except (ResolutionError, UnsupportedError) as exc:
            entry = {"status": "analysis_infeasible", "message": str(exc)}
        status[seed] = entry
        _write_json(d / "status.json", entry)
    return status


def _chunks(seeds, jobs):
    jobs = max(1, min(jobs, len(seeds)))
    return [seeds[i::jobs] for i in range(jobs)]


@dataclass
class ExperimentResult:
    exit_code: int
    out: Path
    manifest: dict


def run_inclusion(cfg: ExperimentConfig, inst, out: Path) -> ChainClasses:
    kw = {}
    if cfg.fast_grid > 0:
        kw["grid"] = FastGrid.over_box(inst.box_x, cfg.fast_grid)
    model = build_inclusion(inst, cfg.slow_cells, eps_cells=cfg.eps_cells, T_min=cfg.t_min, **kw)
    classes = chain_recurrent_set(model)
    write_inclusion_csv(out / "inclusion.csv", model, classes)
    write_chain_json(out / "chain.json", classes)
    return classes


def run_experiment(cfg: ExperimentConfig, jobs: Optional[int] = None) -> ExperimentResult:
    """Simulate every seed, analyze, and write artifacts plus ``manifest.json``.

    Seeds that violate the stability budget are recorded in the manifest while
    the remaining seeds finish; the exit code then reports the violation.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_text())
    inst = cfg.problem()
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    exit_code = EXIT_OK
    classes, inclusion = None, None
    if "inclusion" in cfg.analyses or "containment" in cfg.analyses:
        try:
            classes = run_inclusion(cfg, inst, out)
            inclusion = {"status": "ok", "classes": len(classes.classes)}
        except (ResolutionError, UnsupportedError) as exc:
            inclusion = {"status": "analysis_infeasible", "message": str(exc)}
            exit_code = EXIT_INFEASIBLE
    seeds = list(cfg.seeds)
    status = {}
    chunks = _chunks(seeds, jobs)
    if len(chunks) == 1:
        status.update(_simulate_chunk(cfg, chunks[0], classes, str(out)))
    else:
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            for part in pool.map(_simulate_chunk, [cfg] * len(chunks), chunks, [classes] * len(chunks),
                                 [str(out)] * len(chunks)):
                status.update(part)
    states = {v["status"] for v in status.values()}
    if states & {"stability_violation", "divergence"}:
        exit_code = EXIT_STABILITY
    elif "analysis_infeasible" in states and exit_code == EXIT_OK:
        exit_code = EXIT_INFEASIBLE
    artifacts = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    manifest = {
        "config_hash": cfg.hash(),
        "config": cfg.to_text(),
        "instance": inst.name,
        "seeds": seeds,
        "seed_status": {str(k): status[k] for k in seeds},
        "inclusion": inclusion,
        "known_answers": _jsonable(cfg.known_answers()),
        "versions": {"ttsa": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "networkx": networkx.__version__},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "artifacts": {a: _sha256(out / a) for a in artifacts},
        "exit_code": exit_code,
    }
    _write_json(out / MANIFEST, manifest)
    return ExperimentResult(exit_code, out, manifest)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    return str(v)


def load_run(out) -> tuple[dict, ExperimentConfig]:
    out = Path(out)
    path = out / MANIFEST
    if not path.is_file():
        raise ReportError(f"{out}: no {MANIFEST}")
    try:
        manifest = json.loads(path.read_text())
        cfg = ExperimentConfig.from_text(manifest["config"], str(path))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ReportError(f"{path}: corrupt manifest ({exc})") from exc
    return manifest, cfg


def load_record(out, cfg: ExperimentConfig, seed: int) -> TrajectoryRecord:
    """Reload a seed's trajectory, preferring the binary cache."""
    d = seed_dir(out, seed)
    path = d / "trajectory.ttsa" if (d / "trajectory.ttsa").is_file() else d / "trajectory.csv"
    if not path.is_file():
        raise ReportError(f"{d}: no trajectory")
    reader = TrajectoryRecord.read_binary if path.suffix == ".ttsa" else TrajectoryRecord.read_csv
    n, x, y, z = reader(path)
    stride = int(n[1] - n[0]) if len(n) > 1 else 1
    sup = float(np.max(np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)))
    return TrajectoryRecord(cfg.problem().name, seed, cfg.schedule(), n, x, y, z, stride, sup, cfg.noise_model())


# ---------------------------------------------------------------------------
# reports


def _num(v: float) -> float:
    return float(f"{v:.10g}")


def _last_row(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        last = None
        for line in fh:
            if line.strip():
                last = line
    if last is None:
        raise ReportError(f"{path}: empty trajectory")
    return dict(zip(header, last.strip().split(",")))


def _residual_max(path) -> float:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return max(abs(float(r["joint_residual"])) for r in rows)


@dataclass
class Report:
    data: dict
    text: str


def emit_report(out) -> Report:
    """Per-seed final states, residual decay and containment, read from artifacts."""
    out = Path(out)
    if not out.is_dir():
        raise ReportError(f"{out}: not a directory")
    manifest, cfg = load_run(out)
    known = manifest.get("known_answers") or {}
    target = None
    if "x_star" in known and "y_star" in known:
        target = np.concatenate([np.ravel(known["x_star"]), np.ravel(known["y_star"])]).astype(float)
    seeds = []
    for seed in manifest["seeds"]:
        st = manifest["seed_status"].get(str(seed), {})
        entry = {"seed": seed, "status": st.get("status", "missing")}
        d = seed_dir(out, seed)
        if (d / "trajectory.csv").is_file():
            row = _last_row(d / "trajectory.csv")
            x = [_num(float(row[k])) for k in row if k.startswith("x")]
            y = [_num(float(row[k])) for k in row if k.startswith("y")]
            entry.update(final_x=x, final_y=y)
            if target is not None and target.size == len(x) + len(y):
                entry["gap"] = _num(float(np.linalg.norm(np.array(x + y) - target)))
        res = sorted(d.glob("residual_n*.csv"), key=lambda p: int(p.stem.split("_n")[1]))
        if res:
            vals = [_residual_max(p) for p in res]
            entry["residual_max"] = {p.stem.split("_n")[1]: _num(v) for p, v in zip(res, vals)}
            if len(vals) > 1 and vals[-1] > 0:
                entry["residual_decay_ratio"] = _num(vals[0] / vals[-1])
        if (d / "containment.json").is_file():
            c = json.loads((d / "containment.json").read_text())
            entry["containment_fraction"] = _num(c["fraction"])
            entry["contained"] = bool(c["contained"])
        seeds.append(entry)
    data = {"instance": manifest.get("instance"), "config_hash": manifest.get("config_hash"),
            "target": None if target is None else [_num(v) for v in target], "seeds": seeds,
            "exit_code": manifest.get("exit_code")}
    if (out / "chain.json").is_file():
        data["chain_classes"] = [[_num(c["y_min"]), _num(c["y_max"])]
                                 for c in json.loads((out / "chain.json").read_text())["classes"]]
    return Report(data, _render(data))


def _fmt(v):
    if isinstance(v, list):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _render(data: dict) -> str:
    lines = [f"instance {data['instance']}  config {str(data['config_hash'])[:12]}"]
    if data.get("target") is not None:
        lines.append(f"target (x, y) = {_fmt(data['target'])}")
    cols = ["seed", "status", "final_x", "final_y", "gap", "residual_decay_ratio", "containment_fraction", "contained"]
    lines.append("  ".join(cols))
    for e in data["seeds"]:
        lines.append("  ".join(_fmt(e[c]) if c in e else "-" for c in cols))
    for k, (a, b) in enumerate(data.get("chain_classes", [])):
        lines.append(f"chain class {k}: [{_fmt(a)}, {_fmt(b)}]")
    return "\n".join(lines) + "\n"
