"""Aitchison geometry on the simplex.

Compositions are vectors of strictly positive parts closed to a constant
sum ``kappa``.  Perturbation and powering play the role of addition and
scalar multiplication, and the log-ratio inner product turns the simplex
into a finite-dimensional Euclidean space.  All operations here are pure
functions on immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DimensionTooSmall,
    EmptySample,
    InsufficientSample,
    NonPositivePart,
)

_SUM_RTOL = 1e-10


def _as_parts(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"parts must be a 1-d vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Composition:
    """A D-part composition: strictly positive parts summing to ``kappa``.

    Parameters
    ----------
    parts : array_like of shape (D,)
        Strictly positive shares.  Must already sum to ``kappa`` within a
        relative tolerance of 1e-10; use :func:`closure` to normalize raw
        positive vectors.
    kappa : float, optional
        Closure constant, 1 for proportions or 100 for percentages.
    """

    parts: np.ndarray
    kappa: float = 1.0

    def __post_init__(self):
        parts = _as_parts(self.parts)
        if parts.size < 2:
            raise DimensionTooSmall(f"a composition needs >= 2 parts, got {parts.size}")
        if not np.all(np.isfinite(parts)) or np.any(parts <= 0.0):
            raise NonPositivePart("all parts must be finite and strictly positive")
        if self.kappa <= 0.0:
            raise NonPositivePart(f"kappa must be positive, got {self.kappa}")
        total = parts.sum()
        if abs(total - self.kappa) > _SUM_RTOL * self.kappa:
            raise NonPositivePart(
                f"parts sum to {total!r}, expected kappa={self.kappa!r}; "
                "apply closure() first"
            )
        parts.setflags(write=False)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dimension(self) -> int:
        return self.parts.size

    def proportions(self) -> np.ndarray:
        """Parts rescaled to sum to one (kappa-free view)."""
        return self.parts / self.kappa


@dataclass(frozen=True)
class CompositionSample:
    """N compositions sharing the same dimension and closure constant."""

    data: np.ndarray
    kappa: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionMismatch(f"sample must be N x D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise EmptySample("a sample needs at least one row")
        if data.shape[1] < 2:
            raise DimensionTooSmall("compositions need >= 2 parts")
        if not np.all(np.isfinite(data)) or np.any(data <= 0.0):
            raise NonPositivePart("all parts must be finite and strictly positive")
        sums = data.sum(axis=1)
        if np.any(np.abs(sums - self.kappa) > _SUM_RTOL * self.kappa):
            raise NonPositivePart("every row must sum to kappa; apply closure first")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kappa", float(self.kappa))

    @classmethod
    def from_rows(cls, rows: list[Composition]) -> "CompositionSample":
        if not rows:
            raise EmptySample("no rows supplied")
        kappa = rows[0].kappa
        dim = rows[0].dimension
        for row in rows[1:]:
            if row.dimension != dim:
                raise DimensionMismatch("rows differ in dimension")
            if row.kappa != kappa:
                raise DimensionMismatch("rows differ in kappa")
        return cls(np.vstack([r.parts for r in rows]), kappa)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dimension(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> Composition:
        return Composition(self.data[i].copy(), self.kappa)


def closure(raw, kappa: float = 1.0) -> Composition:
    """Rescale a strictly positive vector so its parts sum to ``kappa``."""
    arr = _as_parts(raw)
    if arr.size < 2:
        raise DimensionTooSmall(f"need >= 2 parts, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise NonPositivePart("closure requires strictly positive entries")
    if kappa <= 0.0:
        raise NonPositivePart(f"kappa must be positive, got {kappa}")
    return Composition(kappa * arr / arr.sum(), kappa)


def closure_matrix(raw: np.ndarray, kappa: float = 1.0) -> CompositionSample:
    """Row-wise closure of an N x D matrix of positive entries."""
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise NonPositivePart("closure requires strictly positive entries")
    return CompositionSample(kappa * arr / arr.sum(axis=1, keepdims=True), kappa)


def _check_pair(z: Composition, y: Composition) -> None:
    if z.dimension != y.dimension:
        raise DimensionMismatch(
            f"compositions of dimension {z.dimension} and {y.dimension}"
        )


def perturb(z: Composition, y: Composition) -> Composition:
    """Simplex addition: closed componentwise product of two compositions."""
    _check_pair(z, y)
    if z.kappa != y.kappa:
        raise DimensionMismatch(f"kappa mismatch: {z.kappa} vs {y.kappa}")
    return closure(z.parts * y.parts, z.kappa)


def power(alpha: float, y: Composition) -> Composition:
    """Simplex scalar multiplication: closed componentwise power."""
    return closure(y.proportions() ** float(alpha), y.kappa)


def uniform(dimension: int, kappa: float = 1.0) -> Composition:
    """The neutral element of perturbation: all parts equal."""
    if dimension < 2:
        raise DimensionTooSmall(f"need >= 2 parts, got {dimension}")
    return Composition(np.full(dimension, kappa / dimension), kappa)


def _clr(parts: np.ndarray) -> np.ndarray:
    logs = np.log(parts)
    return logs - logs.mean()


def aitchison_inner(z: Composition, y: Composition) -> float:
    """Log-ratio inner product: dot product of the two clr vectors."""
    _check_pair(z, y)
    return float(_clr(z.parts) @ _clr(y.parts))


def aitchison_norm(y: Composition) -> float:
    return float(np.sqrt(aitchison_inner(y, y)))


def aitchison_dist(z: Composition, y: Composition) -> float:
    """Aitchison distance, the norm of the perturbation difference."""
    _check_pair(z, y)
    diff = _clr(z.parts) - _clr(y.parts)
    return float(np.sqrt(diff @ diff))


def center(sample: CompositionSample) -> Composition:
    """Closed geometric mean of the rows; the simplicial expectation."""
    if sample.n_rows < 1:
        raise EmptySample("center needs at least one row")
    return closure(np.exp(np.log(sample.data).mean(axis=0)), sample.kappa)


def total_variance(sample: CompositionSample) -> float:
    """Total variance of a composition sample.

    Computed as the sum over coordinates of the unbiased (N-1 divisor)
    sample variances of the ilr coordinates, which equals the mean squared
    Aitchison distance to the center under the same divisor.
    """
    if sample.n_rows < 2:
        raise InsufficientSample("total variance needs at least two rows")
    logs = np.log(sample.data)
    clr = logs - logs.mean(axis=1, keepdims=True)
    centered = clr - clr.mean(axis=0, keepdims=True)
    # ilr is an isometry, so coordinate variances sum to the clr ones
    return float((centered**2).sum() / (sample.n_rows - 1))
