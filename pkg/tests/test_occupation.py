import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttsa.errors import InputError
from ttsa.fields import make_scenario, permute_states
from ttsa.occupation import (BumpFamily, MonomialFamily, OccupationMeasure, PrimitiveBumpFamily,
                             default_family, disintegration_distance, product_measure, stationarity_residual,
                             window_occupation_measure, write_measure_csv, write_residual_csv)
from ttsa.sa_engine import NoiseModel, TableSchedule, TrajectoryRecord, default_schedule, validate_schedule


def manual_record(x, z, b, y=None):
    """Record with hand-picked samples and slow steps ``b``."""
    m = len(x)
    with pytest.warns(UserWarning):
        sched = validate_schedule(TableSchedule(tuple(b)), TableSchedule(tuple(b)), strict=False)
    y = np.zeros((m, 1)) if y is None else np.asarray(y, dtype=float).reshape(m, 1)
    return TrajectoryRecord("manual", 0, sched, np.arange(m), np.asarray(x, dtype=float).reshape(m, -1), y,
                            np.asarray(z, dtype=np.int64))


def fd_gradients(family, x, h=1e-6):
    d = x.shape[1]
    out = np.empty((len(family), x.shape[0], d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out[..., k] = (family.values(x + e) - family.values(x - e)) / (2 * h)
    return out


@pytest.mark.parametrize("family", [
    MonomialFamily([[-1.0, 1.0]], 4),
    MonomialFamily([[-2.0, 2.0], [-1.0, 3.0]], 4),
    BumpFamily(np.array([[0.0, 0.0], [0.5, -0.5]]), 0.7),
    PrimitiveBumpFamily(np.array([[0.0], [0.3]]), 0.4),
])
def test_family_gradients_match_finite_differences(family, rng):
    d = family.d if hasattr(family, "d") else 1
    x = rng.uniform(-2.6, 2.6, size=(50, d))
    assert np.abs(family.gradients(x) - fd_gradients(family, x)).max() <= 1e-6


def test_degree_four_family_size():
    assert len(MonomialFamily([[-1, 1]], 4)) == 4
    assert len(MonomialFamily([[-1, 1], [-1, 1]], 4)) == 14


def test_constant_trajectory_single_atom():
    rec = manual_record(np.full(6, 0.4), np.zeros(6), [0.1] * 6)
    mu = window_occupation_measure(rec, 0, 0.3, atoms="centroid")
    assert mu.weights.tolist() == [1.0]
    assert mu.points[0, 0] == pytest.approx(0.4)
    mu = window_occupation_measure(rec, 0, 0.3)
    assert np.allclose(mu.points, 0.4) and len(np.unique(mu.cells)) == 1


def test_slow_durations_weight_atoms():
    rec = manual_record([0.0, 1.0, 2.0, 3.0], [0, 0, 0, 0], [0.3, 0.1, 0.2])
    mu = window_occupation_measure(rec, 0, 0.4)
    assert np.allclose(mu.weights, [0.75, 0.25], atol=1e-15)
    uni = window_occupation_measure(rec, 0, 0.4, weighting="uniform")
    assert np.allclose(uni.weights, [0.5, 0.5])


def test_uncovered_window_rejected():
    rec = manual_record([0.0, 1.0, 2.0], [0, 0, 0], [0.3, 0.1])
    with pytest.raises(InputError):
        window_occupation_measure(rec, 0, 5.0)


def test_equilibrium_dirac_has_zero_residual(s1):
    w = 0.05
    mu = product_measure(s1.instance, [[1 / 3]], [1.0], [1 / 6], w, origin=[1 / 3 - w / 2])
    assert mu.centers[0, 0] == pytest.approx(1 / 3, abs=1e-15)
    rep = stationarity_residual(mu, s1.instance)
    assert rep.max_abs <= 1e-9 and rep.max_abs_averaged <= 1e-9


def test_product_measure_disintegrates_exactly(s2, rng):
    pts = rng.uniform(-2, 2, size=(30, 1))
    w = rng.random(30)
    mu = product_measure(s2.instance, pts, w / w.sum(), [0.3])
    assert disintegration_distance(mu, s2.instance) == pytest.approx(0.0, abs=1e-15)
    # state-dependent kernel too
    s1b = make_scenario("S1b").instance
    assert disintegration_distance(product_measure(s1b, pts, w / w.sum(), [0.7]), s1b) <= 1e-15


def test_point_mass_in_one_state_is_far_from_stationary(s1):
    mu = OccupationMeasure(np.array([[0.0]]), np.array([[0]]), np.array([1]), np.array([1.0]), 0.05,
                           np.zeros(1), np.zeros(1))
    assert disintegration_distance(mu, s1.instance) == pytest.approx(2 / 3)


@given(st.floats(0.01, 0.99))
def test_residual_is_linear_under_mixing(alpha):
    inst = make_scenario("S2").instance
    a = product_measure(inst, [[0.5], [-1.2]], [0.4, 0.6], [0.0])
    b = product_measure(inst, [[1.0]], [1.0], [0.0])
    mixed = stationarity_residual(a.mix(b, alpha), inst).joint
    expect = alpha * stationarity_residual(a, inst).joint + (1 - alpha) * stationarity_residual(b, inst).joint
    assert np.allclose(mixed, expect, atol=1e-12)


def test_relabeling_leaves_diagnostics_unchanged(s1_records, s1):
    mu = window_occupation_measure(s1_records[0], 1000, 5.0)
    other = permute_states(s1.instance, [1, 0])
    moved = mu.relabeled([1, 0])
    assert np.allclose(stationarity_residual(moved, other).joint, stationarity_residual(mu, s1.instance).joint,
                       atol=1e-13)
    assert disintegration_distance(moved, other) == pytest.approx(disintegration_distance(mu, s1.instance), abs=1e-13)


def test_atom_placements_agree_closely(s1_records, s1):
    rec = s1_records[1]
    reps = {a: stationarity_residual(window_occupation_measure(rec, 1000, 5.0, atoms=a), s1.instance).max_abs
            for a in ("sample", "centroid", "center")}
    assert reps["centroid"] == pytest.approx(reps["sample"], abs=1e-12)
    assert abs(reps["center"] - reps["sample"]) <= 0.05


def test_residual_chunks_match_direct_sum(s1):
    rng = np.random.default_rng(3)
    m = 20_000
    pts = rng.normal(0.3, 0.2, size=(m, 1))
    z = rng.integers(0, 2, m)
    w = np.full(m, 1 / m)
    mu = OccupationMeasure(pts, np.floor(pts / 0.05).astype(int), z, w, 0.05, np.zeros(1), np.array([0.1]))
    fam = default_family(s1.instance)
    direct = np.einsum("fmd,md,m->f", fam.gradients(pts), s1.instance.h(pts, np.full((m, 1), 0.1), z), w)
    assert np.allclose(stationarity_residual(mu, s1.instance).joint, direct, atol=1e-13)


def test_csv_writers(tmp_path, s1_records, s1):
    mu = window_occupation_measure(s1_records[0], 100, 5.0)
    fam = default_family(s1.instance)
    write_measure_csv(tmp_path / "m.csv", mu)
    write_residual_csv(tmp_path / "r.csv", stationarity_residual(mu, s1.instance), fam)
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["function_id", "joint_residual", "averaged_residual"] and len(rows) == len(fam) + 1
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert sum(float(r[-1]) for r in rows[1:]) == pytest.approx(1.0)
