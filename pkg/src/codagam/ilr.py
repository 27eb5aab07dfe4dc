"""Isometric log-ratio transform with a fixed Gram-Schmidt balance basis.

The basis element for coordinate d (1-based) weighs the geometric mean of
the first d parts against part d+1, giving the contrast-matrix row

    [ sqrt(1/(d(d+1))) ... d times ...,  -sqrt(d/(d+1)),  0, ... ]

so coordinate d equals sqrt(d/(d+1)) * log(gmean(y_1..y_d) / y_{d+1}).
The transform is an isometry between the simplex with Aitchison geometry
and ordinary Euclidean space, which everything downstream relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DimensionTooSmall
from .simplex import Composition, CompositionSample, closure_matrix


@dataclass(frozen=True)
class IlrBasis:
    """Contrast matrix of shape (D-1, D) whose rows are clr basis vectors."""

    contrast_matrix: np.ndarray
    dimension: int

    def __post_init__(self):
        mat = np.asarray(self.contrast_matrix, dtype=float)
        if mat.shape != (self.dimension - 1, self.dimension):
            raise DimensionMismatch(
                f"contrast matrix shape {mat.shape} does not match D={self.dimension}"
            )
        mat.setflags(write=False)
        object.__setattr__(self, "contrast_matrix", mat)


@dataclass(frozen=True)
class IlrCoordinates:
    """Real coordinates of a composition with respect to an ilr basis."""

    coords: np.ndarray
    basis_dimension: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 1 or coords.size != self.basis_dimension - 1:
            raise DimensionMismatch(
                f"expected {self.basis_dimension - 1} coordinates, got {coords.shape}"
            )
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)


def build_basis(dimension: int) -> IlrBasis:
    """Build the sequential-binary-partition contrast matrix for dimension D."""
    if dimension < 2:
        raise DimensionTooSmall(f"ilr basis needs D >= 2, got {dimension}")
    mat = np.zeros((dimension - 1, dimension))
    for d in range(1, dimension):
        mat[d - 1, :d] = np.sqrt(1.0 / (d * (d + 1)))
        mat[d - 1, d] = -np.sqrt(d / (d + 1.0))
    return IlrBasis(mat, dimension)


def ilr(y: Composition, basis: IlrBasis) -> IlrCoordinates:
    """Map a composition to its balance coordinates."""
    if y.dimension != basis.dimension:
        raise DimensionMismatch(
            f"composition has {y.dimension} parts, basis expects {basis.dimension}"
        )
    return IlrCoordinates(basis.contrast_matrix @ np.log(y.parts), basis.dimension)


def ilr_inverse(v: IlrCoordinates | np.ndarray, basis: IlrBasis, kappa: float = 1.0) -> Composition:
    """Reconstruct the composition with the given balance coordinates."""
    coords = v.coords if isinstance(v, IlrCoordinates) else np.asarray(v, dtype=float)
    if coords.shape != (basis.dimension - 1,):
        raise DimensionMismatch(
            f"expected {basis.dimension - 1} coordinates, got shape {coords.shape}"
        )
    sample = closure_matrix(np.exp(coords @ basis.contrast_matrix)[None, :], kappa)
    return sample.row(0)


def ilr_sample(sample: CompositionSample, basis: IlrBasis) -> np.ndarray:
    """Row-wise ilr of a sample; returns an N x (D-1) coordinate matrix."""
    if sample.dimension != basis.dimension:
        raise DimensionMismatch(
            f"sample has {sample.dimension} parts, basis expects {basis.dimension}"
        )
    return np.log(sample.data) @ basis.contrast_matrix.T


def ilr_inverse_sample(
    coords: np.ndarray, basis: IlrBasis, kappa: float = 1.0
) -> CompositionSample:
    """Row-wise inverse ilr of an N x (D-1) coordinate matrix."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != basis.dimension - 1:
        raise DimensionMismatch(
            f"expected N x {basis.dimension - 1} coordinates, got shape {coords.shape}"
        )
    return closure_matrix(np.exp(coords @ basis.contrast_matrix), kappa)
