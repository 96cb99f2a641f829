"""Simulation scenarios, the missing-at-random mechanism and normal quantiles.

Both scenarios share the response model

    Y = 2 + sin(X1 + X2 + X3) + 2 Phi^-1((X4 + 1) / 2) + 2 Phi^-1((X5 + 1) / 2) + eps

with X1..X3 standard normal, X4, X5 uniform on (-1, 1) and eps standard
normal, and the propensity ``P(delta = 1 | X) = 0.5 * expit(X1 + ... + X5) + 0.5``.
Scenario ``s2`` appends two independent copies of the five covariates that
the response and the mask ignore.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erfc, expit

from .records import Sample

TRUE_MEAN = 2.0
SCENARIOS = {"s1": 5, "s2": 15}

# substream roles; reordering them changes every generated dataset
ROLE_COVARIATES = 0
ROLE_NOISE = 1
ROLE_MASK = 2
ROLE_NUISANCE = 3
ROLE_SHUFFLE = 4

_SQRT3 = math.sqrt(3.0)


def stream(master_seed: int, replicate: int, role: int) -> np.random.Generator:
    """Independent Philox generator for one (seed, replicate, role) triple."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(replicate), int(role)])
    return np.random.Generator(np.random.Philox(ss))


# -- normal distribution ----------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def _lower_quantile(p: np.ndarray) -> np.ndarray:
    # p in (0, 0.5]: rational initial guess, then one Newton step on Phi(x) = p
    x = np.empty_like(p)
    tail = p < _P_LOW
    if tail.any():
        r = np.sqrt(-2.0 * np.log(p[tail]))
        x[tail] = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / (
            (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        )
    mid = ~tail
    if mid.any():
        s = p[mid] - 0.5
        r = s * s
        x[mid] = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x - (normal_cdf(x) - p) / pdf


def normal_quantile(p):
    """Standard normal quantile, scalar or elementwise.

    Accurate to about 1e-12 absolute on [1e-12, 1 - 1e-12]. The upper half is
    computed from ``1 - p``, which is exact there, so both tails keep full
    relative precision.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0) & (arr < 1)):
        raise ValueError("normal_quantile requires 0 < p < 1")
    flat = arr.reshape(-1)
    upper = flat > 0.5
    q = np.where(upper, 1.0 - flat, flat)
    x = _lower_quantile(q)
    out = np.where(upper, -x, x)
    out[flat == 0.5] = 0.0
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


# -- scenario model ---------------------------------------------------------


def regression_function(x: np.ndarray) -> np.ndarray:
    """E[Y | X]; only the first five columns matter."""
    x = np.asarray(x, dtype=np.float64)
    return (
        TRUE_MEAN
        + np.sin(x[:, 0] + x[:, 1] + x[:, 2])
        + 2.0 * normal_quantile(0.5 * x[:, 3] + 0.5)
        + 2.0 * normal_quantile(0.5 * x[:, 4] + 0.5)
    )


def propensity(x: np.ndarray) -> np.ndarray:
    """P(delta = 1 | X) = 0.5 * expit(X1 + ... + X5) + 0.5."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * expit(x[:, :5].sum(axis=1)) + 0.5


def population_scale(scenario: str) -> tuple[float, ...]:
    """Per-coordinate population SD of the covariates (uniforms have SD 1/sqrt(3))."""
    base = (1.0, 1.0, 1.0, 1.0 / _SQRT3, 1.0 / _SQRT3)
    return base * (SCENARIOS[_check_scenario(scenario)] // 5)


def _check_scenario(scenario: str) -> str:
    key = scenario.lower()
    if key not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
    return key


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    N: int
    seed: int
    replicate: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", _check_scenario(self.scenario))
        if self.N < 1:
            raise ValueError("N must be at least 1")

    @property
    def dim(self) -> int:
        return SCENARIOS[self.scenario]

    @property
    def label(self) -> str:
        return f"{self.scenario.upper()}_d{self.dim}"


def _open_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    # uniform on the open interval (0, 1): midpoints of a 2^53 grid
    return (rng.integers(0, 2**53, size=shape, dtype=np.int64) + 0.5) / 2.0**53


def _base_covariates(rng: np.random.Generator, N: int) -> np.ndarray:
    x = np.empty((N, 5))
    x[:, :3] = rng.standard_normal((N, 3))
    x[:, 3:] = 2.0 * _open_uniform(rng, (N, 2)) - 1.0
    return x


def mar_mask(
    complete: Sample,
    rng: np.random.Generator,
    propensity_fn: Callable[[np.ndarray], np.ndarray] = propensity,
) -> Sample:
    """Draw ``delta ~ Bernoulli(propensity_fn(X))`` independently per record."""
    pi = np.broadcast_to(np.asarray(propensity_fn(complete.x), dtype=np.float64), (len(complete),))
    delta = rng.random(len(complete)) < pi
    return Sample(complete.x, complete.y, delta)


def gen_scenario(spec: ScenarioSpec) -> tuple[Sample, Sample]:
    """Generate ``(complete, masked)`` samples for one replicate."""
    N = spec.N
    base = _base_covariates(stream(spec.seed, spec.replicate, ROLE_COVARIATES), N)
    x = base
    if spec.dim > 5:
        g = stream(spec.seed, spec.replicate, ROLE_NUISANCE)
        copies = [_base_covariates(g, N) for _ in range((spec.dim - 5) // 5)]
        x = np.hstack([base] + copies)
    eps = stream(spec.seed, spec.replicate, ROLE_NOISE).standard_normal(N)
    y = regression_function(x) + eps
    complete = Sample(x, y, np.ones(N, dtype=bool))
    masked = mar_mask(complete, stream(spec.seed, spec.replicate, ROLE_MASK))
    return complete, masked
