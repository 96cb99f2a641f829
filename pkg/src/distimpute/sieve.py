"""Polynomial sieve bases, Gram accumulation and the damped coefficient recursion."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .records import DataError, Sample

MAX_BASIS_DIM = 5000
RANK_TOL = 1e-12
COND_WARN = 1e12


class SingularGramError(np.linalg.LinAlgError):
    """The weighted Gram matrix is numerically singular."""

    def __init__(self, smallest_eigenvalue: float, message: str | None = None):
        self.smallest_eigenvalue = float(smallest_eigenvalue)
        super().__init__(
            message
            or (
                f"sieve Gram matrix is numerically singular (smallest eigenvalue "
                f"{self.smallest_eigenvalue:.3e}); the basis is too large for the "
                f"observed sample"
            )
        )


@dataclass(frozen=True)
class SieveBasisSpec:
    """Polynomial basis on (optionally affinely rescaled) covariates.

    ``mode="total"`` keeps monomials of total degree at most
    ``max_total_degree``; ``mode="tensor"`` bounds each coordinate's degree
    instead. ``center``/``scale`` are a fixed transform ``(x - center) / scale``
    applied before evaluation; they are configuration, not data-dependent.
    """

    dim_d: int
    max_total_degree: int = 3
    mode: str = "total"
    center: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    max_basis_dim: int = MAX_BASIS_DIM

    def __post_init__(self):
        if self.dim_d < 1:
            raise ValueError("dim_d must be positive")
        if self.max_total_degree < 0:
            raise ValueError("max_total_degree must be nonnegative")
        if self.mode not in ("total", "tensor"):
            raise ValueError(f"unknown basis mode {self.mode!r}")
        for name in ("center", "scale"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(a) for a in v)
                if len(v) != self.dim_d:
                    raise ValueError(f"{name} must have length {self.dim_d}")
                object.__setattr__(self, name, v)
        if self.scale is not None and not all(s > 0 for s in self.scale):
            raise ValueError("scale entries must be positive")

    @property
    def basis_dim_K(self) -> int:
        if self.mode == "total":
            return math.comb(self.dim_d + self.max_total_degree, self.max_total_degree)
        return (self.max_total_degree + 1) ** self.dim_d

    @cached_property
    def exponents(self) -> np.ndarray:
        return np.array(basis_index_set(self), dtype=np.int64).reshape(-1, self.dim_d)

    def transform(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64)
        if self.center is not None:
            z = z - np.asarray(self.center)
        if self.scale is not None:
            z = z / np.asarray(self.scale)
        return z


def basis_index_set(spec: SieveBasisSpec) -> list[tuple[int, ...]]:
    """Exponent tuples ordered by total degree, then lexicographically (x1 first)."""
    K = spec.basis_dim_K
    if K > spec.max_basis_dim:
        raise ValueError(f"basis dimension {K} exceeds the cap {spec.max_basis_dim}")
    d, D = spec.dim_d, spec.max_total_degree
    out: list[tuple[int, ...]] = []
    if spec.mode == "total":
        for total in range(D + 1):
            # largest leading exponent first
            out.extend(sorted(_compositions(total, d), reverse=True))
    else:
        everything = list(itertools.product(range(D + 1), repeat=d))
        everything.sort(key=lambda e: (sum(e), tuple(-a for a in e)))
        out = everything
    return out


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def eval_basis_matrix(spec: SieveBasisSpec, x: np.ndarray) -> np.ndarray:
    """Basis matrix of shape (n, K) for covariate rows ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != spec.dim_d:
        raise ValueError(f"expected {spec.dim_d} covariates, got {x.shape[1]}")
    z = spec.transform(x)
    E = spec.exponents
    D = int(E.max()) if E.size else 0
    powers = np.empty((z.shape[0], spec.dim_d, D + 1))
    powers[:, :, 0] = 1.0
    for e in range(1, D + 1):
        powers[:, :, e] = powers[:, :, e - 1] * z
    V = np.ones((z.shape[0], len(E)))
    for k in range(spec.dim_d):
        ek = E[:, k]
        if np.any(ek):
            V *= powers[:, k, :][:, ek]
    return V


def eval_basis(spec: SieveBasisSpec, x) -> np.ndarray:
    """Basis vector V_K(x) for one covariate vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != spec.dim_d:
        raise ValueError(f"expected {spec.dim_d} covariates, got {x.size}")
    return eval_basis_matrix(spec, x.reshape(1, -1))[0]


@dataclass(frozen=True, eq=False)
class GramSummary:
    """Unnormalized sums of delta*V V^T and delta*Y*V over ``count`` records."""

    sigma_hat: np.ndarray
    omega_hat: np.ndarray
    count: int

    def __post_init__(self):
        s = np.asarray(self.sigma_hat, dtype=np.float64)
        object.__setattr__(self, "sigma_hat", (s + s.T) / 2)
        object.__setattr__(self, "omega_hat", np.asarray(self.omega_hat, dtype=np.float64))

    def merge(self, other: "GramSummary") -> "GramSummary":
        return GramSummary(
            self.sigma_hat + other.sigma_hat,
            self.omega_hat + other.omega_hat,
            self.count + other.count,
        )

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            raise DataError("empty Gram summary")
        return self.sigma_hat / self.count, self.omega_hat / self.count


def accumulate_gram(sample: Sample, spec: SieveBasisSpec) -> GramSummary:
    K = spec.basis_dim_K
    if len(sample) == 0:
        return GramSummary(np.zeros((K, K)), np.zeros(K), 0)
    V = eval_basis_matrix(spec, sample.x)
    Vo = V[sample.delta]
    yo = sample.y[sample.delta]
    return GramSummary(Vo.T @ Vo, Vo.T @ yo, len(sample))


def _check_spd(a: np.ndarray, what: str):
    try:
        factor = linalg.cho_factor(a, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise SingularGramError(np.linalg.eigvalsh(a)[0], None) from None
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 < RANK_TOL * diag.max() ** 2:
        lam = np.linalg.eigvalsh(a)[0]
        if lam <= RANK_TOL * np.trace(a) / len(a):
            raise SingularGramError(lam, f"{what} is numerically singular (smallest eigenvalue {lam:.3e})")
    return factor


def solve_exact(gram: GramSummary) -> np.ndarray:
    """Least-squares sieve coefficients ``Sigma_hat^{-1} omega_hat``."""
    sigma, omega = gram.normalized()
    factor = _check_spd(sigma, "sieve Gram matrix")
    return linalg.cho_solve(factor, omega)


class DampedInverse:
    """Cholesky factorization of ``Sigma_tilde + alpha I``."""

    def __init__(self, sigma_tilde: np.ndarray, alpha: float):
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.alpha = float(alpha)
        self.matrix = sigma_tilde + self.alpha * np.eye(len(sigma_tilde))
        try:
            self._factor = linalg.cho_factor(self.matrix, lower=True)
        except linalg.LinAlgError:
            raise SingularGramError(
                np.linalg.eigvalsh(self.matrix)[0],
                "Sigma_tilde + alpha*I is not positive definite; "
                "use a smaller basis or a larger alpha",
            ) from None

    def solve(self, r: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self._factor, r)

    @cached_property
    def condition(self) -> float:
        ev = np.linalg.eigvalsh(self.matrix)
        cond = float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf
        if cond > COND_WARN:
            warnings.warn(
                f"damped sieve system is ill-conditioned (cond ~ {cond:.2e})",
                RuntimeWarning,
                stacklevel=2,
            )
        return cond


def iterate_step(
    beta: np.ndarray, damped: DampedInverse, omega_hat: np.ndarray, sigma_beta: np.ndarray
) -> np.ndarray:
    """One damped update ``beta + (Sigma_tilde + alpha I)^{-1} (omega_hat - Sigma_hat beta)``."""
    return beta + damped.solve(omega_hat - sigma_beta)


def default_alpha(K: int, m: int, N: int, zeta_K_hat: float, c_alpha: float = 1.0) -> float:
    """Damping ``c_alpha * log(K)^2 * zeta_K * sqrt(m / N)``."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if not (N >= m >= 1):
        raise ValueError(f"need N >= m >= 1, got N={N}, m={m}")
    return c_alpha * math.log(K) ** 2 * zeta_K_hat * math.sqrt(m / N)


def estimate_zeta(sample: Sample, spec: SieveBasisSpec) -> float:
    """Largest basis-vector norm over the records of one shard."""
    if len(sample) == 0:
        raise DataError("cannot estimate zeta_K from an empty shard")
    V = eval_basis_matrix(spec, sample.x)
    return float(np.sqrt((V * V).sum(axis=1)).max())


@dataclass
class SieveModel:
    basis: SieveBasisSpec
    beta: np.ndarray
    alpha: float = 0.0
    T: int = 1
    zeta_K_hat: float = 1.0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (self.basis.basis_dim_K,):
            raise ValueError("beta length must equal the basis dimension")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.zeta_K_hat < 1:
            raise ValueError("zeta_K_hat is at least 1 because v_1 = 1")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return eval_basis_matrix(self.basis, x) @ self.beta
