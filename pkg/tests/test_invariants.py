import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttsa.errors import UnsupportedError
from ttsa.fields import ProblemInstance, make_scenario
from ttsa.invariants import (FastGrid, InclusionModel, build_inclusion, chain_recurrent_set, check_limit_points,
                             equilibria_1d, h_range, invariant_measures, invariant_measures_exact,
                             invariant_measures_lp, root_stability, usc_probe, write_chain_json,
                             write_inclusion_csv)
from ttsa.markov_kernel import NoiseKernel
from ttsa.sa_engine import TrajectoryRecord, default_schedule


def linear_instance(rate=1.0, offset=0.0):
    return ProblemInstance("lin", 1, 1, lambda x, y, z: -rate * (x - offset) + 0 * y,
                           lambda x, y, z: -y + 0 * x, NoiseKernel(1, constant=[[1.0]]),
                           [[-1.0, 1.0]], [[-1.0, 1.0]], [0.5], [0.0])


def s2_roots(y):
    """Oracle: real roots of x^3 - x - y from the companion matrix."""
    r = np.roots([1.0, 0.0, -1.0, -y])
    return np.sort(r[np.abs(r.imag) < 1e-9].real)


def distance_to_cell(root, idx, grid):
    lo = grid.origin[0] + idx * grid.cell_width
    return max(lo - root, root - (lo + grid.cell_width), 0.0)


ONE_CELL = 1.0 + 1e-9   # slack for rounding in the cell edges


def test_s2_equilibria_at_zero(s2):
    roots = equilibria_1d(s2.instance, [0.0])
    assert np.allclose(roots, [-1.0, 0.0, 1.0], atol=1e-10)
    assert [root_stability(s2.instance, [0.0], r) for r in roots] == ["stable", "unstable", "stable"]


def test_s1_single_equilibrium(s1):
    assert np.allclose(equilibria_1d(s1.instance, [0.0]), [1 / 6], atol=1e-10)


def test_no_sign_change_no_roots():
    inst = ProblemInstance("push", 1, 1, lambda x, y, z: -1.0 + 0 * x, lambda x, y, z: 0 * y,
                           NoiseKernel(1, constant=[[1.0]]), [[-1, 1]], [[-1, 1]], [0], [0])
    assert equilibria_1d(inst, [0.0]).size == 0


def test_equilibria_need_one_dimension(s3):
    with pytest.raises(UnsupportedError):
        equilibria_1d(s3.instance, [0.0])


@given(st.floats(-0.38, 0.38))
def test_s2_roots_match_companion_oracle(y):
    inst = make_scenario("S2").instance
    assert np.allclose(equilibria_1d(inst, [y]), s2_roots(y), atol=1e-9)


def test_lp_contracting_field_concentrates_at_origin():
    inst = linear_instance()
    jset = invariant_measures_lp(inst, [0.0], n_objectives=4, sweep=3)
    for sup in jset.supports():
        for idx in sup[:, 0]:
            assert distance_to_cell(0.0, idx, jset.grid) <= ONE_CELL * jset.grid.cell_width


def test_lp_s2_extreme_points_near_each_root(s2):
    jset = invariant_measures_lp(s2.instance, [0.0])
    roots = equilibria_1d(s2.instance, [0.0])
    hit = set()
    for sup in jset.supports():
        for idx in sup[:, 0]:
            d = [distance_to_cell(r, idx, jset.grid) for r in roots]
            assert min(d) <= ONE_CELL * jset.grid.cell_width
            hit.add(int(np.argmin(d)))
    assert hit == {0, 1, 2}


def test_lp_set_is_convex(s2):
    jset = invariant_measures_lp(s2.instance, [0.1], n_objectives=4, sweep=3)
    ws = jset.cell_weights
    assert len(ws) >= 2
    for w in ws:
        assert jset.contains(w)
    for alpha in (0.1, 0.5, 0.9):
        assert jset.contains(alpha * ws[0] + (1 - alpha) * ws[-1])
    bad = np.zeros_like(ws[0])
    bad[0] = 1.0                      # Dirac at the box edge is not invariant
    assert not jset.contains(bad)


def test_h_range_s2_at_zero(s2):
    rng = h_range(s2.instance, [0.0], invariant_measures_exact(s2.instance, [0.0]))
    assert rng.lo[0] == pytest.approx(-1.0, abs=1e-9) and rng.hi[0] == pytest.approx(1.0, abs=1e-9)
    lp = h_range(s2.instance, [0.0], invariant_measures_lp(s2.instance, [0.0], n_objectives=0, sweep=0))
    assert lp.lo[0] <= -1.0 + 1e-9 and lp.hi[0] >= 1.0 - 1e-9
    assert abs(lp.lo[0] + 1) <= 0.05 and abs(lp.hi[0] - 1) <= 0.05


def test_h_range_is_degenerate_for_unique_equilibrium(s1):
    for y in (-1.0, 0.0, 1 / 6, 2.0):
        r = h_range(s1.instance, [y], invariant_measures(s1.instance, [y]))
        lam = y + 1 / 6
        assert r.width[0] <= 1e-9
        assert r.lo[0] == pytest.approx(-(y - 0.5 * lam), abs=1e-9)


def test_s1_chain_is_single_class_at_fixed_point(s1):
    classes = chain_recurrent_set(build_inclusion(s1.instance))
    assert len(classes.classes) == 1
    m = classes.model
    assert int(m.cell_of(1 / 6)) in classes.classes[0]


def test_stable_origin_chain():
    n = 101
    centers = np.linspace(-1, 1, n)
    w = centers[1] - centers[0]
    model = InclusionModel(centers, w, -centers, -centers, 2 * w, 1.0)
    classes = chain_recurrent_set(model)
    assert len(classes.classes) == 1
    assert int(model.cell_of(0.0)) in classes.classes[0]
    # at resolution eps a cell is chain recurrent once |y| (1 - e^-T) <= eps
    reach = model.eps / (1 - np.exp(-model.T_min)) + w
    assert np.all(np.abs(centers[classes.classes[0]]) <= reach)


def test_s2_chain_classes_contain_equilibria(s2, tmp_path):
    classes = chain_recurrent_set(build_inclusion(s2.instance))
    cells = set(classes.cells().tolist())
    for ystar in (-np.sqrt(2), 0.0, np.sqrt(2)):
        assert int(classes.model.cell_of(ystar)) in cells
    write_inclusion_csv(tmp_path / "inc.csv", classes.model, classes)
    write_chain_json(tmp_path / "chain.json", classes)
    assert len(json.loads((tmp_path / "chain.json").read_text())["classes"]) == len(classes.classes)


def test_limit_points_constant_trajectory(s1):
    classes = chain_recurrent_set(build_inclusion(s1.instance))
    m = 20_000
    rec = TrajectoryRecord("S1", 0, default_schedule(), np.arange(m), np.full((m, 1), 1 / 3),
                           np.full((m, 1), 1 / 6), np.zeros(m, dtype=np.int64))
    rep = check_limit_points(rec, classes)
    assert rep.contained and rep.fraction == 1.0
    far = TrajectoryRecord("S1", 0, default_schedule(), np.arange(m), np.full((m, 1), 1 / 3),
                           np.full((m, 1), 2.5), np.zeros(m, dtype=np.int64))
    assert not check_limit_points(far, classes).contained


def test_usc_constant_sequence(s2):
    rep = usc_probe(s2.instance, [[0.2]] * 3, [0.2])
    assert np.allclose(rep.residuals, rep.residuals[0]) and rep.passed


def test_usc_s1_members_converge(s1):
    ys = [[1 / 6 + 1 / n] for n in (5, 10, 100, 1000)]
    rep = usc_probe(s1.instance, ys, [1 / 6])
    assert rep.passed
    assert np.all(np.diff(rep.residuals) < 0)
    roots = [equilibria_1d(s1.instance, y)[0] for y in ys]
    assert abs(roots[-1] - 1 / 3) < 0.02


def test_usc_s2_decreasing_to_zero(s2):
    ys = [[0.1 / k] for k in (1, 2, 4, 8, 16)]
    for member in (0, 1, 2):
        rep = usc_probe(s2.instance, ys, [0.0], member=member)
        assert rep.passed


def test_fast_grid_cells():
    g = FastGrid.over_box([[-1.0, 1.0]], 0.5)
    assert g.n_cells == 4
    assert np.allclose(g.centers()[:, 0], [-0.75, -0.25, 0.25, 0.75])
    assert g.cell_of([[0.3]]).tolist() == [[2]]
