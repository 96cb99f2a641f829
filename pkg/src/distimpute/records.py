"""Observation containers shared by every estimator.

A :class:`Sample` stores a block of incomplete observations column-wise
(covariates, response, response indicator). Missing responses are stored
as NaN and ``delta`` is the authoritative missingness flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class ObservationRecord:
    x: tuple[float, ...]
    y: float | None
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise DataError(f"delta must be 0 or 1, got {self.delta!r}")
        if (self.y is None) == bool(self.delta):
            raise DataError("y must be present exactly when delta == 1")


@dataclass(frozen=True, eq=False)
class Sample:
    """Column-wise block of incomplete observations.

    Parameters
    ----------
    x : ndarray of shape (n, d)
        Fully observed covariates.
    y : ndarray of shape (n,)
        Responses; entries with ``delta == 0`` are NaN.
    delta : ndarray of shape (n,), bool
        True where the response is observed.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        delta = np.ascontiguousarray(self.delta, dtype=bool).reshape(-1)
        if not (len(x) == len(y) == len(delta)):
            raise DataError(
                f"length mismatch: x={len(x)}, y={len(y)}, delta={len(delta)}"
            )
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite")
        if not np.all(np.isfinite(y[delta])):
            raise DataError("observed responses must be finite")
        y = np.where(delta, y, np.nan)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.delta.sum())

    def observed(self) -> tuple[np.ndarray, np.ndarray]:
        """Covariates and responses of the observed records."""
        return self.x[self.delta], self.y[self.delta]

    def slice(self, start: int, stop: int) -> "Sample":
        return Sample(self.x[start:stop], self.y[start:stop], self.delta[start:stop])

    def take(self, index: np.ndarray) -> "Sample":
        return Sample(self.x[index], self.y[index], self.delta[index])

    def with_response_shift(self, c: float) -> "Sample":
        return Sample(self.x, self.y + c, self.delta)

    def equals(self, other: "Sample") -> bool:
        return (
            self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.y, other.y, equal_nan=True)
        )

    @classmethod
    def from_records(cls, records: Sequence[ObservationRecord]) -> "Sample":
        if not records:
            raise DataError("no records")
        x = np.array([r.x for r in records], dtype=np.float64)
        y = np.array([np.nan if r.y is None else r.y for r in records])
        delta = np.array([r.delta for r in records], dtype=bool)
        return cls(x, y, delta)

    def records(self) -> list[ObservationRecord]:
        out = []
        for xi, yi, di in zip(self.x, self.y, self.delta):
            out.append(
                ObservationRecord(
                    tuple(float(v) for v in xi), float(yi) if di else None, int(di)
                )
            )
        return out


def concat(samples: Iterable[Sample]) -> Sample:
    samples = list(samples)
    return Sample(
        np.concatenate([s.x for s in samples]),
        np.concatenate([s.y for s in samples]),
        np.concatenate([s.delta for s in samples]),
    )


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Centre and scale each column by its own mean and SD (ddof=0).

    Constant columns are centred only.
    """
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (x - center) / scale
