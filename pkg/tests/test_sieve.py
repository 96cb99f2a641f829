import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from distimpute.records import DataError, Sample
from distimpute.sieve import (
    DampedInverse,
    GramSummary,
    SieveBasisSpec,
    SieveModel,
    SingularGramError,
    accumulate_gram,
    basis_index_set,
    default_alpha,
    estimate_zeta,
    eval_basis,
    eval_basis_matrix,
    iterate_step,
    solve_exact,
)

from .conftest import random_sample


@pytest.mark.parametrize("d,K", [(2, 10), (5, 56), (15, 816)])
def test_basis_sizes(d, K):
    spec = SieveBasisSpec(d, 3)
    assert spec.basis_dim_K == K
    idx = basis_index_set(spec)
    assert len(idx) == K == len(set(idx))
    assert idx[0] == (0,) * d
    assert all(sum(e) <= 3 for e in idx)


def test_basis_order():
    assert basis_index_set(SieveBasisSpec(2, 2)) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    degs = [sum(e) for e in basis_index_set(SieveBasisSpec(4, 3))]
    assert degs == sorted(degs)


def test_tensor_mode():
    spec = SieveBasisSpec(2, 3, mode="tensor")
    idx = basis_index_set(spec)
    assert spec.basis_dim_K == 16 == len(idx)
    assert idx[0] == (0, 0) and max(max(e) for e in idx) == 3


def test_basis_cap():
    with pytest.raises(ValueError, match="exceeds"):
        basis_index_set(SieveBasisSpec(30, 4))
    with pytest.raises(ValueError):
        basis_index_set(SieveBasisSpec(5, 3, max_basis_dim=50))


def test_spec_validation():
    with pytest.raises(ValueError):
        SieveBasisSpec(0)
    with pytest.raises(ValueError):
        SieveBasisSpec(2, -1)
    with pytest.raises(ValueError):
        SieveBasisSpec(2, mode="spline")
    with pytest.raises(ValueError):
        SieveBasisSpec(2, scale=(1.0, 0.0))
    with pytest.raises(ValueError):
        SieveBasisSpec(2, center=(1.0,))


def test_eval_basis_examples():
    v = eval_basis(SieveBasisSpec(5, 3), np.zeros(5))
    assert v[0] == 1 and np.all(v[1:] == 0)
    assert np.array_equal(eval_basis(SieveBasisSpec(1, 3), [2.0]), [1.0, 2.0, 4.0, 8.0])
    with pytest.raises(ValueError):
        eval_basis(SieveBasisSpec(2, 3), [1.0])


def test_eval_basis_transform():
    spec = SieveBasisSpec(1, 2, center=(1.0,), scale=(2.0,))
    assert np.allclose(eval_basis(spec, [5.0]), [1.0, 2.0, 4.0])


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_eval_basis_matches_monomials(x):
    spec = SieveBasisSpec(3, 3)
    v = eval_basis(spec, x)
    assert v[0] == 1.0
    expected = [math.prod(xi**e for xi, e in zip(x, ex)) for ex in basis_index_set(spec)]
    assert np.allclose(v, expected, rtol=1e-13, atol=1e-13)


def test_accumulate_examples():
    spec = SieveBasisSpec(1, 1)
    g = accumulate_gram(Sample([[1.0], [3.0]], [np.nan, np.nan], [False, False]), spec)
    assert np.all(g.sigma_hat == 0) and np.all(g.omega_hat == 0) and g.count == 2
    g = accumulate_gram(Sample([[1.0]], [2.0], [True]), spec)
    assert np.array_equal(g.sigma_hat, [[1, 1], [1, 1]])
    assert np.array_equal(g.omega_hat, [2, 2])
    empty = accumulate_gram(Sample(np.zeros((0, 1)), [], []), spec)
    assert empty.count == 0 and empty.sigma_hat.shape == (2, 2)


def test_merge_matches_pooled_exactly_for_integer_data():
    rng = np.random.default_rng(1)
    x = rng.integers(-3, 4, size=(60, 2)).astype(float)
    y = rng.integers(-5, 6, size=60).astype(float)
    s = Sample(x, y, rng.random(60) < 0.7)
    spec = SieveBasisSpec(2, 3)
    a, b = accumulate_gram(s.slice(0, 25), spec), accumulate_gram(s.slice(25, 60), spec)
    full = accumulate_gram(s, spec)
    for merged in (a.merge(b), b.merge(a)):
        assert np.array_equal(merged.sigma_hat, full.sigma_hat)
        assert np.array_equal(merged.omega_hat, full.omega_hat)
        assert merged.count == 60


@given(st.integers(0, 1000))
def test_gram_symmetric_psd(seed):
    g = accumulate_gram(random_sample(seed, n=40, d=2), SieveBasisSpec(2, 3))
    assert np.array_equal(g.sigma_hat, g.sigma_hat.T)
    ev = np.linalg.eigvalsh(g.sigma_hat)
    assert ev[0] >= -1e-8 * np.trace(g.sigma_hat)


def test_solve_exact_examples():
    w = np.array([1.0, -2.0, 0.5])
    assert np.allclose(solve_exact(GramSummary(np.eye(3), w, 1)), w)
    s = Sample([[0.0], [1.0]], [1.0, 3.0], [True, True])
    assert np.allclose(solve_exact(accumulate_gram(s, SieveBasisSpec(1, 1))), [1.0, 2.0], atol=1e-14)


def test_solve_exact_noiseless_recovery_and_residual():
    rng = np.random.default_rng(5)
    spec = SieveBasisSpec(3, 3)
    beta0 = rng.standard_normal(spec.basis_dim_K)
    x = rng.uniform(-1, 1, size=(800, 3))
    y = eval_basis_matrix(spec, x) @ beta0
    g = accumulate_gram(Sample(x, y, rng.random(800) < 0.8), spec)
    beta = solve_exact(g)
    assert np.max(np.abs(beta - beta0)) <= 1e-8
    sigma, omega = g.normalized()
    assert np.linalg.norm(sigma @ beta - omega) <= 1e-10 * np.linalg.norm(omega)


def test_solve_exact_singular():
    s = Sample([[1.0], [1.0], [1.0]], [1.0, 2.0, 3.0], [True] * 3)
    with pytest.raises(SingularGramError) as info:
        solve_exact(accumulate_gram(s, SieveBasisSpec(1, 2)))
    assert info.value.smallest_eigenvalue < 1e-10
    assert isinstance(info.value, np.linalg.LinAlgError)
    with pytest.raises(DataError):
        GramSummary(np.zeros((1, 1)), np.zeros(1), 0).normalized()


def test_iterate_step_fixed_point_and_exact_newton():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 4))
    sigma = A.T @ A / 6
    omega = rng.standard_normal(4)
    beta = rng.standard_normal(4)
    damped = DampedInverse(sigma, 0.3)
    assert np.array_equal(iterate_step(beta, damped, omega, omega), beta)
    exact = np.linalg.solve(sigma, omega)
    one = iterate_step(beta, DampedInverse(sigma, 0.0), omega, sigma @ beta)
    assert np.allclose(one, exact, rtol=1e-10, atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_iterate_step_minimizes_penalized_surrogate(seed, alpha):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((8, 3)), rng.standard_normal((20, 3))
    sigma_tilde, sigma_hat = A.T @ A / 8 + 0.05 * np.eye(3), B.T @ B / 20
    omega, beta0 = rng.standard_normal(3), rng.standard_normal(3)
    r = omega - sigma_hat @ beta0

    def loss(b):
        e = b - beta0
        return e @ sigma_tilde @ e - 2 * e @ r + alpha * e @ e

    brute = minimize(loss, beta0, method="BFGS", options={"gtol": 1e-12}).x
    step = iterate_step(beta0, DampedInverse(sigma_tilde, alpha), omega, sigma_hat @ beta0)
    assert np.allclose(step, brute, atol=1e-6)


def test_damped_inverse_guards():
    with pytest.raises(ValueError):
        DampedInverse(np.eye(2), -1.0)
    with pytest.raises(SingularGramError):
        DampedInverse(np.array([[1.0, 0.0], [0.0, -1.0]]), 0.0)
    bad = DampedInverse(np.diag([1.0, 1e-14]), 0.0)
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        assert bad.condition > 1e12
    assert DampedInverse(np.eye(3), 1.0).condition == pytest.approx(1.0)


def test_default_alpha_examples():
    assert default_alpha(56, 100, 100, 1.0) == pytest.approx(math.log(56) ** 2)
    # (ln 56)^2 * sqrt(1e-3) from a 40-digit evaluation
    assert default_alpha(56, 10, 10_000, 1.0) == pytest.approx(0.5123982766662416267, rel=1e-14)
    assert default_alpha(56, 10, 10_000, 3.0) == pytest.approx(3 * 0.5123982766662416267, rel=1e-14)
    a1, a2 = default_alpha(10, 8, 4000, 2.0, 0.5), default_alpha(10, 16, 4000, 2.0, 0.5)
    assert a2 / a1 == pytest.approx(math.sqrt(2), rel=1e-14)
    with pytest.raises(ValueError):
        default_alpha(1, 1, 10, 1.0)
    with pytest.raises(ValueError):
        default_alpha(10, 11, 10, 1.0)


def test_estimate_zeta():
    assert estimate_zeta(random_sample(1, n=30), SieveBasisSpec(2, 0)) == 1.0
    assert estimate_zeta(Sample([[0.0, 0.0]], [1.0], [True]), SieveBasisSpec(2, 3)) == 1.0
    s = random_sample(2, n=50)
    spec = SieveBasisSpec(2, 3)
    z = estimate_zeta(s, spec)
    assert all(z >= np.linalg.norm(eval_basis(spec, xi)) for xi in s.x)
    with pytest.raises(DataError):
        estimate_zeta(Sample(np.zeros((0, 2)), [], []), spec)


def test_sieve_model():
    spec = SieveBasisSpec(1, 2)
    model = SieveModel(spec, [1.0, 0.0, 2.0], alpha=0.1, T=3, zeta_K_hat=2.0)
    assert np.allclose(model.predict(np.array([[1.0], [2.0]])), [3.0, 9.0])
    with pytest.raises(ValueError):
        SieveModel(spec, [1.0, 2.0])
    with pytest.raises(ValueError):
        SieveModel(spec, [1.0, 0.0, 0.0], alpha=-1)
    with pytest.raises(ValueError):
        SieveModel(spec, [1.0, 0.0, 0.0], zeta_K_hat=0.5)
