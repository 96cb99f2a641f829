"""Higher-order Legendre kernels and the Nadaraya-Watson regression estimator.

The univariate kernel of order ``q`` is the projection kernel

    K1(u) = sum_{j < q, j even} p_j(0) p_j(u),   |u| <= 1,

where ``p_j`` are the Legendre polynomials orthonormal on [-1, 1]. It
integrates to one and annihilates the monomials ``u, ..., u**(q-1)``.
Multivariate weights are products of ``K1`` over coordinates with a common
bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from numpy.polynomial import chebyshev, legendre

from .records import DataError, Sample

LEGENDRE_MAX_DEGREE = 64
DEFAULT_TRIM_RATIO = 0.045
DEN_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Kernel configuration.

    ``trim_ratio`` controls denominator trimming in :func:`nw_regress`: a query
    falls back to the observed-response mean when its weight sum is below
    ``max(1e-10 * n_obs, trim_ratio * sum|w|)``. ``None`` keeps only the
    absolute floor ``|den| < 1e-10 * n_obs``.
    """

    order_q: int
    bandwidth_h: float
    dim_d: int
    trim_ratio: float | None = DEFAULT_TRIM_RATIO

    def __post_init__(self):
        if int(self.order_q) != self.order_q or self.order_q < 2 or self.order_q % 2:
            raise ValueError(f"order_q must be an even integer >= 2, got {self.order_q}")
        if self.order_q - 2 > LEGENDRE_MAX_DEGREE:
            raise ValueError(
                f"order_q={self.order_q} needs Legendre degree above {LEGENDRE_MAX_DEGREE}"
            )
        if not (self.bandwidth_h > 0 and math.isfinite(self.bandwidth_h)):
            raise ValueError(f"bandwidth_h must be positive, got {self.bandwidth_h}")
        if int(self.dim_d) != self.dim_d or self.dim_d < 1:
            raise ValueError(f"dim_d must be a positive integer, got {self.dim_d}")
        if self.trim_ratio is not None and not (0 <= self.trim_ratio < 1):
            raise ValueError(f"trim_ratio must lie in [0, 1), got {self.trim_ratio}")

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.order_q, h, self.dim_d, self.trim_ratio)


def legendre_eval(degree: int, u: float, max_degree: int = LEGENDRE_MAX_DEGREE) -> float:
    """Orthonormal Legendre polynomial of ``degree`` at ``u`` (three-term recurrence)."""
    if degree < 0 or int(degree) != degree:
        raise ValueError(f"degree must be a nonnegative integer, got {degree}")
    if degree > max_degree:
        raise ValueError(f"degree {degree} exceeds the recurrence cap {max_degree}")
    if not -1.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [-1, 1], got {u}")
    prev = 1.0 / math.sqrt(2.0)
    if degree == 0:
        return prev
    cur = math.sqrt(1.5) * u
    for j in range(1, degree):
        a = math.sqrt((2 * j + 1) * (2 * j + 3)) / (j + 1)
        b = j / (j + 1) * math.sqrt((2 * j + 3) / (2 * j - 1))
        prev, cur = cur, a * u * cur - b * prev
    return cur


@lru_cache(maxsize=None)
def _kernel_coefficients(order_q: int) -> np.ndarray:
    # Legendre-series coefficients c_j = p_j(0) * sqrt((2j+1)/2), re-expanded in
    # Chebyshev polynomials; only even terms survive, and T_{2k}(u) = T_k(2u^2 - 1).
    c = np.zeros(order_q - 1)
    for j in range(0, order_q - 1, 2):
        c[j] = legendre_eval(j, 0.0) * math.sqrt((2 * j + 1) / 2)
    cheb = legendre.Legendre(c).convert(kind=chebyshev.Chebyshev).coef
    coef = np.ascontiguousarray(cheb[::2], dtype=np.float64)
    coef.setflags(write=False)
    return coef


@njit(cache=True, nogil=True)
def _k1(u, coef):
    if u > 1.0 or u < -1.0:
        return 0.0
    t = 2.0 * u * u - 1.0
    t2 = 2.0 * t
    b1 = 0.0
    b2 = 0.0
    for k in range(coef.size - 1, 0, -1):
        b0 = t2 * b1 - b2 + coef[k]
        b2 = b1
        b1 = b0
    return t * b1 - b2 + coef[0]


@njit(cache=True, nogil=True)
def _k1_array(u, coef):
    out = np.empty(u.size)
    flat = u.reshape(-1)
    for i in range(flat.size):
        out[i] = _k1(flat[i], coef)
    return out.reshape(u.shape)


@njit(cache=True, nogil=True)
def _nw_sums(xq, xo, yo, h, coef):
    # Weight sums accumulated strictly in observation order for every query.
    nq = xq.shape[0]
    no = xo.shape[0]
    d = xo.shape[1]
    num = np.zeros(nq)
    den = np.zeros(nq)
    absden = np.zeros(nq)
    for i in range(nq):
        s_num = 0.0
        s_den = 0.0
        s_abs = 0.0
        for j in range(no):
            w = 1.0
            for k in range(d):
                w = w * _k1((xo[j, k] - xq[i, k]) / h, coef)
                if w == 0.0:
                    break
            s_num += w * yo[j]
            s_den += w
            s_abs += abs(w)
        num[i] = s_num
        den[i] = s_den
        absden[i] = s_abs
    return num, den, absden


def univariate_kernel(spec: KernelSpec, u):
    """Evaluate the order-``q`` Legendre kernel at ``u`` (scalar or array)."""
    coef = _kernel_coefficients(spec.order_q)
    if np.ndim(u) == 0:
        return _k1(float(u), coef)
    return _k1_array(np.asarray(u, dtype=np.float64), coef)


def product_kernel(spec: KernelSpec, v) -> float:
    """Product of univariate kernels over the coordinates of ``v``."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != spec.dim_d:
        raise ValueError(f"expected a vector of length {spec.dim_d}, got {v.size}")
    coef = _kernel_coefficients(spec.order_q)
    w = 1.0
    for vk in v:
        w = w * _k1(float(vk), coef)
        if w == 0.0:
            break
    return w


@dataclass(frozen=True)
class NWEstimate:
    value: float
    fallback: bool


def _trimmed(den, absden, n_obs, trim_ratio):
    floor = DEN_FLOOR * n_obs
    if trim_ratio is None:
        return np.abs(den) < floor
    return den < np.maximum(floor, trim_ratio * absden)


def nw_regress_many(
    x_obs: np.ndarray, y_obs: np.ndarray, queries: np.ndarray, spec: KernelSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Nadaraya-Watson fits at many queries from observed pairs.

    Returns
    -------
    values : ndarray of shape (n_queries,)
    fallback : bool ndarray of shape (n_queries,)
        Queries whose denominator was trimmed; their value is ``mean(y_obs)``.
    """
    x_obs = np.ascontiguousarray(x_obs, dtype=np.float64)
    y_obs = np.ascontiguousarray(y_obs, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if x_obs.ndim != 2 or x_obs.shape[1] != spec.dim_d:
        raise ValueError(f"x_obs must have shape (n, {spec.dim_d})")
    if queries.ndim != 2 or queries.shape[1] != spec.dim_d:
        raise ValueError(f"queries must have shape (k, {spec.dim_d})")
    if len(y_obs) == 0:
        raise DataError("no observed responses")
    coef = _kernel_coefficients(spec.order_q)
    num, den, absden = _nw_sums(queries, x_obs, y_obs, float(spec.bandwidth_h), coef)
    bad = _trimmed(den, absden, len(y_obs), spec.trim_ratio)
    values = np.empty(len(queries))
    values[~bad] = num[~bad] / den[~bad]
    values[bad] = y_obs.mean()
    return values, bad


def nw_regress(sample: Sample, spec: KernelSpec, query) -> NWEstimate:
    """Kernel regression estimate of E[Y | X = query] from the observed records."""
    x_obs, y_obs = sample.observed()
    if len(y_obs) == 0:
        raise DataError("sample has no observed responses")
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != spec.dim_d:
        raise ValueError(f"query must have length {spec.dim_d}")
    values, bad = nw_regress_many(x_obs, y_obs, q, spec)
    return NWEstimate(float(values[0]), bool(bad[0]))


def default_bandwidth(N: int, m: int, order_q: int, dim_d: int, c_h: float = 1.0) -> float:
    """Bandwidth rate ``max{m^(1/(2q+3d)) N^(-2/(2q+3d)), m^(1/(q+d)) N^(-1/(q+d))}``.

    Intended for coordinate-wise standardized covariates.
    """
    if not (N >= m >= 1):
        raise ValueError(f"need N >= m >= 1, got N={N}, m={m}")
    a = 2 * order_q + 3 * dim_d
    b = order_q + dim_d
    rate = max(m ** (1 / a) * N ** (-2 / a), m ** (1 / b) * N ** (-1 / b))
    return c_h * rate
