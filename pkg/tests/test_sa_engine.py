import numpy as np
import pytest

from ttsa.errors import DivergenceError, ScheduleError, StabilityViolation
from ttsa.fields import ProblemInstance, make_scenario
from ttsa.markov_kernel import NoiseKernel
from ttsa.sa_engine import (NoiseModel, PowerLaw, TableSchedule, TrajectoryRecord, default_schedule,
                            generate_martingale_noise, initial_state, noise_envelope_check, run_batch,
                            run_iterates, step, validate_schedule)


def zero_instance():
    return ProblemInstance("zero", 1, 1, lambda x, y, z: 0 * x, lambda x, y, z: 0 * y,
                           NoiseKernel(2, constant=[[0.5, 0.5], [0.5, 0.5]]), [[-1, 1]], [[-1, 1]], [0.3], [-0.2])


def test_default_schedule_flags():
    sched = validate_schedule(PowerLaw(1, 0.6), PowerLaw(1, 0.9))
    assert sched.valid and all(sched.flags.values())


def test_equal_exponents_fail_ratio():
    with pytest.raises(ScheduleError) as info:
        validate_schedule(PowerLaw(1, 1.0), PowerLaw(1, 1.0))
    assert "ratio_vanishes" in info.value.failed
    assert validate_schedule(PowerLaw(1, 1.0), PowerLaw(1, 1.0), strict=False).flags["ratio_vanishes"] is False


def test_slow_a_fails_square_summable():
    with pytest.raises(ScheduleError) as info:
        validate_schedule(PowerLaw(1, 0.4), PowerLaw(1, 0.9))
    assert "square_summable" in info.value.failed


def test_summable_a_fails_robbins_monro():
    with pytest.raises(ScheduleError) as info:
        validate_schedule(PowerLaw(1, 1.2), PowerLaw(1, 1.5))
    assert "robbins_monro_a" in str(info.value)


def test_table_schedule_warns():
    n = np.arange(2000) + 1.0
    with pytest.warns(UserWarning):
        sched = validate_schedule(TableSchedule(tuple(n ** -0.6)), TableSchedule(tuple(n ** -0.9)), N=1000)
    assert sched.valid


def test_ratio_decreasing():
    sched = default_schedule()
    a, b = sched.a(100_001), sched.b(100_001)
    assert (b[10_000:] / a[10_000:]).max() < b[1000] / a[1000]


def test_no_noise_is_zero(rng):
    M, Mp = generate_martingale_noise(NoiseModel(), np.ones(2), np.ones(1), rng)
    assert np.array_equal(M, np.zeros(2)) and np.array_equal(Mp, np.zeros(1))


def test_gaussian_noise_mean_within_clt_band():
    rng = np.random.default_rng(2024)
    model = NoiseModel("gaussian", 0.1)
    draws = np.array([np.concatenate(generate_martingale_noise(model, [0.5], [0.2], rng)) for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0)) <= 3 * 0.1 / np.sqrt(100_000))


def test_noise_envelope_on_random_states(rng):
    model = NoiseModel("gaussian", 0.1)
    xs, ys = rng.uniform(-3, 3, size=(100, 1)), rng.uniform(-3, 3, size=(100, 1))
    est, bound, se = noise_envelope_check(model, xs, ys, 2000, rng)
    assert np.all(est <= bound + 3 * se)


def test_step_example():
    inst = make_scenario("S1").instance
    sched = validate_schedule(PowerLaw(1.0, 0.6), PowerLaw(0.5, 0.9))
    st = initial_state(inst, 0, x0=[0.0], y0=[0.0], z0=1)
    nxt = step(inst, sched, st, NoiseModel())
    assert nxt.n == 1
    assert nxt.x[0] == pytest.approx(0.5, abs=1e-15)
    assert nxt.y[0] == pytest.approx(0.0, abs=1e-15)


def test_zero_fields_keep_state():
    inst = zero_instance()
    st = initial_state(inst, 3)
    for _ in range(5):
        st = step(inst, default_schedule(), st, NoiseModel())
    assert st.n == 5 and st.x[0] == 0.3 and st.y[0] == -0.2
    rec = run_iterates(inst, default_schedule(), 500, 0)
    assert np.all(rec.x == 0.3) and np.all(rec.y == -0.2)


def test_divergence_carries_step_index():
    inst = ProblemInstance("blow", 1, 1, lambda x, y, z: np.full_like(x, np.inf), lambda x, y, z: 0 * y,
                           NoiseKernel(1, constant=[[1.0]]), [[-1, 1]], [[-1, 1]], [1.0], [0.0])
    with pytest.raises(DivergenceError) as info:
        step(inst, default_schedule(), initial_state(inst, 0), NoiseModel())
    assert info.value.step == 0


def test_stability_monitor_reports_without_projecting():
    inst = ProblemInstance("grow", 1, 1, lambda x, y, z: x, lambda x, y, z: 0 * y,
                           NoiseKernel(1, constant=[[1.0]]), [[-1, 1]], [[-1, 1]], [1.0], [0.0])
    with pytest.raises(StabilityViolation):
        run_iterates(inst, default_schedule(), 10_000, 0, budget=50.0)


def test_same_seed_same_record():
    inst = make_scenario("S1b").instance
    m = NoiseModel("gaussian", 0.1)
    r1 = run_iterates(inst, default_schedule(), 3000, 7, m)
    r2 = run_iterates(inst, default_schedule(), 3000, 7, m)
    for f in ("n", "x", "y", "z"):
        assert np.array_equal(getattr(r1, f), getattr(r2, f))


def test_batch_matches_single_runs():
    inst = make_scenario("S2").instance
    m = NoiseModel("gaussian", 0.1)
    batch = run_batch(inst, default_schedule(), 2000, [4, 9], m).records
    single = run_iterates(inst, default_schedule(), 2000, 9, m)
    assert np.array_equal(batch[9].x, single.x) and np.array_equal(batch[9].z, single.z)


def test_s1_converges(s1):
    rec = run_iterates(s1.instance, default_schedule(), 200_000, 0, NoiseModel("gaussian", 0.1))
    assert abs(rec.x[-1, 0] - 1 / 3) < 5e-2 and abs(rec.y[-1, 0] - 1 / 6) < 5e-2


def test_s2_tail_avoids_unstable_root(s2):
    rec = run_iterates(s2.instance, default_schedule(), 50_000, 1, NoiseModel("gaussian", 0.05))
    tail = rec.x[-rec.x.shape[0] // 10:, 0]
    assert np.mean(np.abs(tail) <= 0.2) < 0.01


def test_record_round_trips(tmp_path):
    rec = run_iterates(make_scenario("S3").instance, default_schedule(), 500, 2, NoiseModel("gaussian", 0.1))
    rec.to_csv(tmp_path / "t.csv")
    rec.to_binary(tmp_path / "t.ttsa")
    for name in ("t.csv", "t.ttsa"):
        back = TrajectoryRecord.load(tmp_path / name, rec.schedule, 2)
        assert np.array_equal(back.x, rec.x) and np.array_equal(back.z, rec.z) and np.array_equal(back.n, rec.n)
    head = (tmp_path / "t.ttsa").read_bytes()[:4]
    assert head == b"TTSA"
