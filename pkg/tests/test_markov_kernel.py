import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttsa.errors import InputError, ModelDefinitionError, StructuralError
from ttsa.fields import make_scenario
from ttsa.markov_kernel import (NoiseKernel, check_irreducible, inverse_cdf, kernel_at, kernel_lipschitz,
                                sample_next, stationary_distribution, stationary_many, unreachable_states,
                                verify_kernel)


def power_iteration(P, iters=20_000):
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(iters):
        pi = pi @ P
    return pi


def random_stochastic(rng, n, floor=0.0):
    M = rng.random((n, n)) + floor
    return M / M.sum(axis=1, keepdims=True)


def test_two_state_stationary_by_hand():
    law = stationary_distribution(np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert np.allclose(law.pi, [2 / 3, 1 / 3], atol=1e-14)
    assert law.residual <= 1e-10


def test_doubly_stochastic_is_uniform():
    assert np.allclose(stationary_distribution(np.full((2, 2), 0.5)).pi, [0.5, 0.5])


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_direct_solve_matches_power_iteration(n, seed):
    P = random_stochastic(np.random.default_rng(seed), n, floor=0.05)
    law = stationary_distribution(P)
    assert np.abs(law.pi - power_iteration(P, 2000)).max() <= 1e-8
    assert np.abs(law.pi @ P - law.pi).max() <= 1e-10
    assert law.pi.min() >= 0 and abs(law.pi.sum() - 1) <= 1e-12


def test_batched_solve_agrees_with_single(rng):
    Ps = np.stack([random_stochastic(rng, 4, 0.1) for _ in range(7)])
    many = stationary_many(Ps)
    for P, pi in zip(Ps, many):
        assert np.allclose(pi, stationary_distribution(P).pi, atol=1e-13)


def test_reducible_matrix_names_unreachable_states():
    P = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.3, 0.3, 0.4]])
    with pytest.raises(StructuralError) as info:
        stationary_distribution(P)
    assert 2 in info.value.unreachable
    assert unreachable_states(P) == [2]


@pytest.mark.parametrize("P, expected", [
    ([[0, 1], [1, 0]], True),
    ([[1, 0], [0, 1]], False),
])
def test_irreducibility_small_cases(P, expected):
    assert check_irreducible(np.array(P, dtype=float)) is expected


def test_positive_matrix_is_irreducible(rng):
    assert check_irreducible(random_stochastic(rng, 5, 0.01))


def test_s1b_row_at_zero():
    k = make_scenario("S1b").instance.kernel
    P = kernel_at(k, [0.0], [0.0])
    assert np.allclose(P[0], [0.5, 0.5], atol=1e-15)
    assert np.allclose(P[1], [0.5, 0.5])


def test_constant_kernel_ignores_state():
    k = make_scenario("S1").instance.kernel
    assert np.array_equal(kernel_at(k, [3.0], [-2.0]), kernel_at(k, [0.0], [0.0]))


def test_lipschitz_probe_matches_documented_constant(rng):
    sc = make_scenario("S1b")
    k = sc.instance.kernel
    L = sc.known_answers["kernel_lipschitz"]
    y = rng.uniform(-3, 3, size=20)
    for yv in y:
        a = kernel_at(k, [0.0], [yv])
        b = kernel_at(k, [0.0], [yv + 1e-9])
        assert np.abs(a - b).max() <= L * 1e-9 * (1 + 1e-6)
    assert kernel_lipschitz(k, sc.instance.box_x, sc.instance.box_y, rng=rng) <= L * (1 + 1e-4)


def test_non_finite_input_rejected():
    with pytest.raises(InputError):
        kernel_at(make_scenario("S1").instance.kernel, [np.nan], [0.0])


def test_bad_rows_rejected():
    k = NoiseKernel(2, lambda x, y: np.array([[0.7, 0.7], [0.5, 0.5]]))
    with pytest.raises(ModelDefinitionError):
        kernel_at(k, [0.0], [0.0])
    with pytest.raises(ModelDefinitionError):
        verify_kernel(k, [[-1, 1]], [[-1, 1]])


def test_inverse_cdf_cases():
    assert sample_next(NoiseKernel(3, constant=[[1, 0, 0], [0, 1, 0], [0, 0, 1]]), [0.0], [0.0], 0, 0.999) == 0
    half = NoiseKernel(2, constant=[[0.5, 0.5], [0.5, 0.5]])
    assert sample_next(half, [0.0], [0.0], 0, 0.25) == 0
    assert sample_next(half, [0.0], [0.0], 0, 0.75) == 1


def test_sampling_frequency_within_binomial_band(rng):
    row = np.array([0.2, 0.5, 0.3])
    n = 100_000
    draws = inverse_cdf(np.broadcast_to(row, (n, 3)), rng.random(n))
    freq = np.bincount(draws, minlength=3) / n
    sd = np.sqrt(row * (1 - row) / n)
    assert np.all(np.abs(freq - row) <= 3 * sd)


def test_permuted_kernel_relabels_stationary_law():
    k = make_scenario("S1").instance.kernel
    perm = [1, 0]
    assert np.allclose(k.permuted(perm).stationary(np.zeros((1, 1)), np.zeros((1, 1)))[0],
                       k.stationary(np.zeros((1, 1)), np.zeros((1, 1)))[0][perm])
