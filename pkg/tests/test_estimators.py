import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distimpute.cluster import CommLedger, partition_even
from distimpute.estimators import (
    EfficiencyOracleInput,
    EstimateReport,
    NumericalError,
    classical_kernel_mu,
    classical_sieve_mu,
    complete_case,
    efficiency_bound_oracle,
    influence_values,
    kdi_estimate,
    oracle_mean,
    sdi_estimate,
    sgm_estimate,
)
from distimpute.numkernel import KernelSpec
from distimpute.records import DataError, Sample
from distimpute.sieve import SieveBasisSpec, SingularGramError, accumulate_gram, eval_basis_matrix, solve_exact

from .conftest import random_sample

KSPEC = KernelSpec(6, 2.5, 2)
BASIS = SieveBasisSpec(2, 3)


def all_observed(s: Sample) -> Sample:
    rng = np.random.default_rng(len(s))
    y = np.where(s.delta, s.y, rng.standard_normal(len(s)))
    return Sample(s.x, y, np.ones(len(s), bool))


def test_report_validation():
    with pytest.raises(ValueError):
        EstimateReport("median", 1.0)
    with pytest.raises(NumericalError):
        EstimateReport("kdi", float("nan"))


# -- degeneracies -------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_kdi_single_worker_is_classical_bitwise(seed):
    s = random_sample(seed, n=200)
    kdi = kdi_estimate(partition_even(s, 1), KSPEC)
    classical = classical_kernel_mu(s, KSPEC)
    assert kdi.mu_hat == classical.mu_hat
    assert kdi.diagnostics["fallbacks"] == classical.diagnostics["fallbacks"]


@pytest.mark.parametrize("seed", range(5))
def test_sdi_single_worker_undamped_is_classical(seed):
    s = random_sample(seed, n=300)
    sdi = sdi_estimate(partition_even(s, 1), BASIS, alpha=0.0)
    assert abs(sdi.mu_hat - classical_sieve_mu(s, BASIS).mu_hat) <= 1e-10
    assert sdi.diagnostics["converged"]


def test_no_missingness_collapse():
    s = all_observed(random_sample(7, n=400))
    target = s.y.mean()
    for m in (1, 4):
        sh = partition_even(s, m)
        assert abs(kdi_estimate(sh, KSPEC).mu_hat - target) <= 1e-10
        assert abs(sdi_estimate(sh, BASIS).mu_hat - target) <= 1e-10
    assert kdi_estimate(partition_even(s, 1), KSPEC).mu_hat == target
    assert classical_kernel_mu(s, KSPEC).mu_hat == target
    assert abs(classical_sieve_mu(s, BASIS).mu_hat - target) <= 1e-12
    assert complete_case(s).mu_hat == target
    assert oracle_mean(s).mu_hat == target
    sh1 = partition_even(s, 1)
    assert sgm_estimate(sh1, "kernel", kernel_spec=KSPEC).mu_hat == target
    assert abs(sgm_estimate(sh1, "sieve", basis=BASIS).mu_hat - target) <= 1e-12


@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_location_equivariance(seed, c):
    s = random_sample(seed % 200, n=200)
    t = s.with_response_shift(c)
    sh, th = partition_even(s, 2), partition_even(t, 2)
    pairs = [
        (kdi_estimate(sh, KSPEC), kdi_estimate(th, KSPEC)),
        (classical_kernel_mu(s, KSPEC), classical_kernel_mu(t, KSPEC)),
        (classical_sieve_mu(s, BASIS), classical_sieve_mu(t, BASIS)),
        (sdi_estimate(sh, BASIS, c_alpha=0.05, T_max=2000, tol=1e-14),
         sdi_estimate(th, BASIS, c_alpha=0.05, T_max=2000, tol=1e-14)),
        (complete_case(s), complete_case(t)),
    ]
    for a, b in pairs:
        assert b.mu_hat - a.mu_hat == pytest.approx(c, abs=1e-9)


def test_constant_response_kernel():
    s = random_sample(3, n=150)
    const = Sample(s.x, np.full(len(s), 4.0), s.delta)
    assert classical_kernel_mu(const, KSPEC).mu_hat == pytest.approx(4.0, abs=1e-15)
    assert oracle_mean(Sample(s.x, np.full(len(s), 2.5), np.ones(len(s), bool))).mu_hat == 2.5


def test_sieve_noiseless_span():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((600, 2))
    beta0 = rng.standard_normal(BASIS.basis_dim_K)
    truth = eval_basis_matrix(BASIS, x) @ beta0
    pi = 0.5 + 0.4 / (1 + np.exp(-x[:, 0]))
    s = Sample(x, truth, rng.random(600) < pi)
    assert classical_sieve_mu(s, BASIS).mu_hat == pytest.approx(truth.mean(), abs=1e-8)


def test_sieve_identity_gap_reported():
    rep = classical_sieve_mu(random_sample(1, n=300), BASIS)
    assert rep.diagnostics["identity_gap"] <= 1e-10


# -- distributed structure ---------------------------------------------------


@pytest.mark.parametrize("m", [1, 2, 5])
def test_kdi_ledger(m):
    rep = kdi_estimate(partition_even(random_sample(2, n=200), m), KSPEC)
    led = rep.ledger
    assert (led.scalars_up, led.messages_up, led.messages_down, led.scalars_down, led.rounds) == (m, m, 0, 0, 1)
    assert len(rep.diagnostics["fallbacks_per_worker"]) == m
    assert rep.diagnostics["standardization"] == "per-worker"


@pytest.mark.parametrize("m,T_max", [(1, 3), (4, 7), (5, 200)])
def test_sdi_ledger(m, T_max):
    rep = sdi_estimate(partition_even(random_sample(4, n=500), m), BASIS, c_alpha=0.5, T_max=T_max)
    K, T = BASIS.basis_dim_K, rep.diagnostics["iterations"]
    led = rep.ledger
    assert 1 <= T <= T_max
    assert led.scalars_up == m * K + T * m * K + m
    assert led.messages_up == (T + 2) * m
    assert led.messages_down == T and led.scalars_down == T * K and led.scalars_down_fanout == T * K * m
    assert led.rounds == 2 * T + 2


def test_sdi_diagnostics_and_convergence():
    s = random_sample(8, n=2000)
    rep = sdi_estimate(partition_even(s, 4), BASIS, c_alpha=0.1, T_max=500)
    d = rep.diagnostics
    for key in ("iterations", "update_norm", "alpha", "zeta_K_hat", "condition", "alpha_increases"):
        assert key in d
    assert d["zeta_K_hat"] >= 1
    beta_hat = solve_exact(accumulate_gram(s, BASIS))
    assert np.linalg.norm(d["beta"] - beta_hat) <= 1e-8
    assert np.linalg.norm(d["beta"] - beta_hat) <= np.linalg.norm(beta_hat)


def test_sdi_safeguard_rescues_undamped_run():
    s = random_sample(9, n=800, p_obs=0.6)
    sh = partition_even(s, 8)
    exact = classical_sieve_mu(s, BASIS).mu_hat
    rep = sdi_estimate(sh, BASIS, alpha=0.0, T_max=2000)
    assert rep.diagnostics["alpha_increases"] >= 1
    assert rep.mu_hat == pytest.approx(exact, abs=1e-8)


def test_kdi_relabel_invariance():
    sh = partition_even(random_sample(5, n=300), 3)
    order = [2, 0, 1]
    a = kdi_estimate(sh, KSPEC).mu_hat
    b = kdi_estimate(sh.relabel(order), KSPEC).mu_hat
    assert a == pytest.approx(b, abs=1e-13)


def test_sdi_relabel_invariance():
    sh = partition_even(random_sample(6, n=900), 3)
    kw = dict(c_alpha=0.1, T_max=3000, tol=1e-14)
    a = sdi_estimate(sh, BASIS, **kw).mu_hat
    b = sdi_estimate(sh.relabel([1, 2, 0]), BASIS, **kw).mu_hat
    assert a == pytest.approx(b, abs=1e-10)


def test_kdi_error_names_empty_shard():
    s = random_sample(0, n=40)
    delta = s.delta.copy()
    delta[20:] = False
    with pytest.raises(DataError, match="shard 2"):
        kdi_estimate(partition_even(Sample(s.x, s.y, delta), 2), KSPEC)


def test_sdi_errors():
    s = random_sample(0, n=40)
    with pytest.raises(ValueError):
        sdi_estimate(partition_even(s, 2), BASIS, T_max=0)
    tiny = random_sample(1, n=12)
    with pytest.raises(SingularGramError):
        sdi_estimate(partition_even(tiny, 2), SieveBasisSpec(2, 4), alpha=0.0)


def test_sgm_uses_first_shard_only():
    s = random_sample(3, n=300)
    sh = partition_even(s, 3)
    k = sgm_estimate(sh, "kernel", kernel_spec=KSPEC)
    assert k.mu_hat == classical_kernel_mu(sh.shards[0], KSPEC).mu_hat
    assert k.estimator_id == "sgm-kernel" and k.m_workers == 3 and k.ledger == CommLedger()
    other = partition_even(s, 3).relabel([0, 1, 1])
    assert sgm_estimate(other, "sieve", basis=BASIS).mu_hat == sgm_estimate(sh, "sieve", basis=BASIS).mu_hat
    with pytest.raises(ValueError):
        sgm_estimate(sh, "ridge")
    with pytest.raises(ValueError):
        sgm_estimate(sh, "kernel")


# -- baselines ---------------------------------------------------------------


def test_complete_case_and_oracle():
    s = Sample([[0.0], [1.0], [2.0]], [1.0, np.nan, 4.0], [True, False, True])
    assert complete_case(s).mu_hat == 2.5
    with pytest.raises(DataError):
        complete_case(Sample([[0.0]], [np.nan], [False]))
    with pytest.raises(DataError):
        oracle_mean(s)


def test_complete_case_unbiased_under_mcar():
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(300):
        x = rng.standard_normal((200, 1))
        y = 1.0 + x[:, 0]
        vals.append(complete_case(Sample(x, y, rng.random(200) < 0.6)).mu_hat)
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - 1.0) <= 4 * se


def test_efficiency_bound_examples():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1000, 2))
    y = x[:, 0] + rng.standard_normal(1000)
    full = Sample(x, y, np.ones(1000, bool))
    ones = lambda x: np.ones(len(x))  # noqa: E731
    inp = EfficiencyOracleInput(ones, lambda x: x[:, 0], full)
    assert efficiency_bound_oracle(inp) == pytest.approx(np.var(y, ddof=1), rel=1e-12)

    pi = lambda x: 0.5 + 0.3 * (x[:, 0] > 0)  # noqa: E731
    delta = rng.random(1000) < pi(x)
    const = Sample(x, np.full(1000, 3.0), delta)
    v = influence_values(EfficiencyOracleInput(pi, lambda x: np.full(len(x), 3.0), const))
    assert np.allclose(v, 3.0, atol=1e-14)
    assert efficiency_bound_oracle(EfficiencyOracleInput(pi, lambda x: np.full(len(x), 3.0), const)) < 1e-28


def test_efficiency_bound_rejects_nonpositive_propensity():
    s = random_sample(0, n=20)
    with pytest.raises(ValueError, match="propensity"):
        efficiency_bound_oracle(EfficiencyOracleInput(lambda x: np.zeros(len(x)), lambda x: x[:, 0], s))
