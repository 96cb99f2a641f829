"""Mean estimators for a response missing at random.

Distributed estimators run on a :class:`~distimpute.cluster.Cluster`; every
other estimator is single-machine. All return an :class:`EstimateReport`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cluster import Cluster, CommLedger, Reply, ShardedDataset, check_observed, reduce_sum
from .numkernel import KernelSpec, nw_regress_many
from .records import DataError, Sample, standardize_columns
from .sieve import (
    DampedInverse,
    SieveBasisSpec,
    accumulate_gram,
    default_alpha,
    eval_basis_matrix,
    iterate_step,
    solve_exact,
)

ESTIMATORS = (
    "kdi",
    "sdi",
    "sgm-kernel",
    "sgm-sieve",
    "classical-kernel",
    "classical-sieve",
    "complete-case",
    "oracle",
)

DEFAULT_T_MAX = 200
DEFAULT_TOL = 1e-10
IDENTITY_TOL = 1e-10


class NumericalError(ArithmeticError):
    pass


@dataclass
class EstimateReport:
    estimator_id: str
    mu_hat: float
    m_workers: int = 1
    ledger: CommLedger = field(default_factory=CommLedger)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimator_id not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator_id!r}")
        if not math.isfinite(self.mu_hat):
            raise NumericalError(f"{self.estimator_id} produced a non-finite estimate")


# -- kernel -----------------------------------------------------------------


def _local_kernel_mu(sample: Sample, spec: KernelSpec) -> tuple[float, int]:
    if sample.n_observed == 0:
        raise DataError("no observed responses")
    if sample.dim != spec.dim_d:
        raise ValueError(f"kernel dimension {spec.dim_d} != data dimension {sample.dim}")
    z = standardize_columns(sample.x)
    obs = sample.delta
    y_obs = sample.y[obs]
    total = y_obs.sum()
    n_fallback = 0
    if not obs.all():
        imputed, bad = nw_regress_many(z[obs], y_obs, z[~obs], spec)
        total = total + imputed.sum()
        n_fallback = int(bad.sum())
    return float(total / len(sample)), n_fallback


def classical_kernel_mu(sample: Sample, spec: KernelSpec) -> EstimateReport:
    """Kernel regression imputation mean on one machine."""
    mu, fb = _local_kernel_mu(sample, spec)
    return EstimateReport(
        "classical-kernel",
        mu,
        1,
        diagnostics={
            "h": spec.bandwidth_h,
            "q": spec.order_q,
            "fallbacks": fb,
            "standardization": "global",
        },
    )


def kdi_estimate(sharded: ShardedDataset, spec: KernelSpec) -> EstimateReport:
    """One-shot kernel imputation: average of per-worker imputation means."""
    check_observed(sharded)
    cluster = Cluster(sharded)

    def task(w):
        mu, fb = _local_kernel_mu(w.data, spec)
        return Reply(mu, {"fallbacks": fb})

    local = cluster.map_workers(task)
    mu = reduce_sum(local) / cluster.m
    fallbacks = [info[0]["fallbacks"] for info in cluster.worker_info]
    return EstimateReport(
        "kdi",
        mu,
        cluster.m,
        cluster.ledger,
        {
            "h": spec.bandwidth_h,
            "q": spec.order_q,
            "fallbacks": int(sum(fallbacks)),
            "fallbacks_per_worker": fallbacks,
            "standardization": "per-worker",
        },
    )


# -- sieve ------------------------------------------------------------------


def classical_sieve_mu(sample: Sample, basis: SieveBasisSpec) -> EstimateReport:
    """Sieve regression imputation mean with the exact least-squares fit."""
    if sample.n_observed == 0:
        raise DataError("no observed responses")
    beta = solve_exact(accumulate_gram(sample, basis))
    fitted = eval_basis_matrix(basis, sample.x) @ beta
    obs = sample.delta
    mu = (sample.y[obs].sum() + fitted[~obs].sum()) / len(sample)
    # v_1 = 1 makes the observed residuals sum to zero, so the plain mean of
    # the fitted values must agree.
    mu_fitted = fitted.mean()
    gap = abs(mu - mu_fitted)
    if gap > IDENTITY_TOL * max(1.0, abs(mu)):
        raise NumericalError(f"sieve residual-mean identity violated by {gap:.3e}")
    return EstimateReport(
        "classical-sieve",
        float(mu),
        1,
        diagnostics={"K": basis.basis_dim_K, "identity_gap": gap, "beta": beta},
    )


def _energy_slack(f: float) -> float:
    return 1e-9 * (abs(f) + 1.0)


def sdi_estimate(
    sharded: ShardedDataset,
    basis: SieveBasisSpec,
    c_alpha: float = 1.0,
    T_max: int = DEFAULT_T_MAX,
    tol: float = DEFAULT_TOL,
    alpha: float | None = None,
    safeguard: bool = True,
) -> EstimateReport:
    """Multi-round sieve imputation.

    Workers ship one K-vector of local scores, then one local Gram-vector
    product per iteration, then one local imputation sum. The coordinator
    factors ``Sigma_tilde + alpha I`` from its own shard once and broadcasts
    every iterate.

    With ``safeguard`` the coordinator also tracks the least-squares objective
    ``beta' Sigma_hat beta - 2 beta' omega_hat`` (all its factors arrive with
    each round). If an iterate raised it, the coordinator returns to the last
    accepted iterate and doubles ``alpha``. No extra messages are involved.
    """
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    if len(sharded.shards[0]) == 0:
        raise DataError("coordinator shard is empty")
    cluster = Cluster(sharded)
    N, m, K = cluster.N, cluster.m, basis.basis_dim_K

    def local_scores(w):
        V = eval_basis_matrix(basis, w.data.x)
        Vo = V[w.data.delta]
        G = Vo.T @ Vo
        w.store["V"] = V
        w.store["G"] = (G + G.T) / 2
        return Vo.T @ w.data.y[w.data.delta]

    def gram_product(w):
        beta = w.payload
        if beta is None:  # beta_0 = 0 is known to every worker
            return np.zeros(K)
        return w.store["G"] @ beta

    def imputed_sum(w):
        d = w.data.delta
        fitted = w.store["V"][~d] @ w.payload
        return w.data.y[d].sum() + fitted.sum()

    omega = reduce_sum(cluster.map_workers(local_scores)) / N

    coord = cluster.coordinator()
    sigma_tilde = coord.store["G"] / len(coord.data)
    V1 = coord.store["V"]
    zeta = float(np.sqrt((V1 * V1).sum(axis=1)).max())
    alpha0 = default_alpha(K, m, N, zeta, c_alpha) if alpha is None else float(alpha)
    damped = DampedInverse(sigma_tilde, alpha0)

    beta = np.zeros(K)
    accepted = None
    increases = 0
    step = math.inf
    update_norm = math.inf
    T = 0
    for T in range(1, T_max + 1):
        sigma_beta = reduce_sum(cluster.map_workers(gram_product)) / N
        base = beta
        if safeguard:
            f = float(beta @ sigma_beta - 2 * beta @ omega)
            if accepted is not None and f > accepted[2] + _energy_slack(accepted[2]):
                base, sigma_beta, f = accepted
                new_alpha = 2 * damped.alpha if damped.alpha > 0 else np.trace(sigma_tilde) / K
                damped = DampedInverse(sigma_tilde, new_alpha)
                increases += 1
            accepted = (base, sigma_beta, f)
        new = iterate_step(base, damped, omega, sigma_beta)
        update_norm = float(np.linalg.norm(new - base))
        step = update_norm / max(1.0, float(np.linalg.norm(new)))
        beta = new
        cluster.broadcast(beta)
        if step < tol:
            break

    mu = reduce_sum(cluster.map_workers(imputed_sum)) / N
    return EstimateReport(
        "sdi",
        float(mu),
        m,
        cluster.ledger,
        {
            "K": K,
            "iterations": T,
            "converged": bool(step < tol),
            "relative_update": step,
            "update_norm": update_norm,
            "alpha": alpha0,
            "alpha_final": damped.alpha,
            "alpha_increases": increases,
            "zeta_K_hat": zeta,
            "condition": damped.condition,
            "beta": beta,
        },
    )


# -- baselines --------------------------------------------------------------


def sgm_estimate(
    sharded: ShardedDataset,
    which: str,
    kernel_spec: KernelSpec | None = None,
    basis: SieveBasisSpec | None = None,
) -> EstimateReport:
    """Classical estimator applied to shard 1 only."""
    shard = sharded.shards[0]
    if which == "kernel":
        if kernel_spec is None:
            raise ValueError("kernel_spec is required")
        rep = classical_kernel_mu(shard, kernel_spec)
    elif which == "sieve":
        if basis is None:
            raise ValueError("basis is required")
        rep = classical_sieve_mu(shard, basis)
    else:
        raise ValueError(f"which must be 'kernel' or 'sieve', got {which!r}")
    return EstimateReport(f"sgm-{which}", rep.mu_hat, sharded.m, CommLedger(), rep.diagnostics)


def complete_case(sample: Sample) -> EstimateReport:
    if sample.n_observed == 0:
        raise DataError("no observed responses")
    return EstimateReport(
        "complete-case", float(sample.y[sample.delta].mean()), diagnostics={"n_observed": sample.n_observed}
    )


def oracle_mean(complete: Sample) -> EstimateReport:
    """Mean of all responses before masking (simulation only)."""
    if not np.all(np.isfinite(complete.y)):
        raise DataError("oracle needs every response; got a masked sample")
    return EstimateReport("oracle", float(complete.y.mean()))


@dataclass(frozen=True)
class EfficiencyOracleInput:
    true_pi: Callable[[np.ndarray], np.ndarray]
    true_m: Callable[[np.ndarray], np.ndarray]
    records: Sample


def influence_values(inp: EfficiencyOracleInput) -> np.ndarray:
    s = inp.records
    pi = np.asarray(inp.true_pi(s.x), dtype=np.float64)
    if np.any(pi <= 0) or np.any(pi > 1):
        raise ValueError("propensity must lie in (0, 1] at every evaluated point")
    mx = np.asarray(inp.true_m(s.x), dtype=np.float64)
    d = s.delta.astype(np.float64)
    dy = np.where(s.delta, s.y, 0.0)
    return dy / pi + (pi - d) / pi * mx


def efficiency_bound_oracle(inp: EfficiencyOracleInput) -> float:
    """Sample variance of the efficient influence values; divide by N for SD^2."""
    v = influence_values(inp)
    if len(v) < 2:
        raise ValueError("need at least two records")
    return float(v.var(ddof=1))
