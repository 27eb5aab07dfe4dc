"""Penalized B-spline bases and their mixed-model reparameterization.

Univariate smooths use cubic B-splines on equally spaced knots with a
discrete difference penalty on adjacent coefficients.  Tensor smooths take
row-wise Kronecker products of two marginal bases with the anisotropic
penalty K1 (x) I + I (x) K2.  Because the two Kronecker terms commute, the
marginal eigendecompositions diagonalize the full penalty jointly, which
turns every smooth into unpenalized "fixed" columns (the penalty null
space, minus the constant absorbed by the intercept) plus "random" columns
whose Gaussian prior precision is a known combination of one or two
smoothing variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DimensionMismatch, InvalidSpec, OutOfDomain, RankError

_NULL_EIG_RTOL = 1e-8


@dataclass(frozen=True)
class SmoothSpec:
    """Declarative description of a univariate or tensor-product smooth.

    ``covariates`` holds one name for a univariate smooth, two for a
    tensor smooth.  ``k`` is the number of basis functions per margin.
    ``domain`` fixes the knot span per covariate; when None it is taken
    from the observed data range expanded by a small relative margin.
    """

    covariates: tuple[str, ...]
    k: tuple[int, ...]
    degree: int = 3
    penalty_order: int = 2
    domain: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        covs = tuple(self.covariates)
        ks = (self.k,) * len(covs) if isinstance(self.k, int) else tuple(self.k)
        if len(covs) not in (1, 2):
            raise InvalidSpec("a smooth takes one covariate, a tensor takes two")
        if len(ks) != len(covs):
            raise InvalidSpec("one basis size k per covariate is required")
        for k in ks:
            if k < self.degree + 1:
                raise InvalidSpec(f"k={k} is below degree+1={self.degree + 1}")
            if self.penalty_order >= k:
                raise InvalidSpec(f"penalty order {self.penalty_order} must be < k={k}")
        if self.degree < 1:
            raise InvalidSpec("spline degree must be >= 1")
        if self.penalty_order < 1:
            raise InvalidSpec("penalty order must be >= 1")
        if self.domain is not None:
            dom = tuple((float(a), float(b)) for a, b in self.domain)
            if len(dom) != len(covs):
                raise InvalidSpec("one domain interval per covariate is required")
            for lo, hi in dom:
                if not lo < hi:
                    raise InvalidSpec(f"empty domain [{lo}, {hi}]")
            object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "k", ks)

    @property
    def is_tensor(self) -> bool:
        return len(self.covariates) == 2

    def label(self) -> str:
        inner = ",".join(self.covariates)
        return f"te({inner})" if self.is_tensor else f"s({inner})"


def infer_domain(x: np.ndarray) -> tuple[float, float]:
    """Observed range expanded by a 1e-6 relative margin for knot placement."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise InvalidSpec("covariate contains non-finite values")
    if lo == hi:
        raise InvalidSpec("covariate is constant; a smooth needs spread")
    margin = 1e-6 * (hi - lo)
    return lo - margin, hi + margin


def _knots(domain: tuple[float, float], k: int, degree: int) -> np.ndarray:
    lo, hi = domain
    n_seg = k - degree
    h = (hi - lo) / n_seg
    return lo + h * np.arange(-degree, n_seg + degree + 1)


def _design_at(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    return BSpline.design_matrix(x, knots, degree).toarray()


def _derivative_design_at(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    # dB_{i,p} = p * (B_{i,p-1}/(t_{i+p}-t_i) - B_{i+1,p-1}/(t_{i+p+1}-t_{i+1}))
    k = len(knots) - degree - 1
    lower = BSpline.design_matrix(x, knots, degree - 1).toarray()  # N x (k+1)
    out = np.zeros((x.size, k))
    for i in range(k):
        out[:, i] = degree * (
            lower[:, i] / (knots[i + degree] - knots[i])
            - lower[:, i + 1] / (knots[i + degree + 1] - knots[i + 1])
        )
    return out


def bspline_design(
    x,
    spec: SmoothSpec,
    margin: int = 0,
    domain: tuple[float, float] | None = None,
    extrapolate: bool = False,
) -> np.ndarray:
    """Evaluate the B-spline basis of one margin of ``spec`` at points ``x``.

    Rows are a partition of unity inside the domain.  Points outside the
    domain raise :class:`OutOfDomain` unless ``extrapolate`` is set, in
    which case the basis is extended linearly from the nearest boundary
    (first-order Taylor extension, preserving the spline's value and slope
    there).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if domain is None:
        domain = spec.domain[margin] if spec.domain is not None else infer_domain(x)
    lo, hi = domain
    k = spec.k[margin]
    knots = _knots((lo, hi), k, spec.degree)
    inside = (x >= lo) & (x <= hi)
    if not extrapolate and not inside.all():
        bad = x[~inside]
        raise OutOfDomain(f"values outside [{lo}, {hi}]: {bad[:5]}")
    out = np.empty((x.size, k))
    if inside.any():
        out[inside] = _design_at(x[inside], knots, spec.degree)
    for bound, mask in ((lo, x < lo), (hi, x > hi)):
        if mask.any():
            at = np.array([bound])
            base = _design_at(at, knots, spec.degree)
            slope = _derivative_design_at(at, knots, spec.degree)
            out[mask] = base + (x[mask, None] - bound) * slope
    return out


def difference_penalty(k: int, order: int) -> np.ndarray:
    """Penalty matrix D'D for the given finite-difference order."""
    if order < 1 or order >= k:
        raise InvalidSpec(f"difference order must satisfy 1 <= order < k, got {order}")
    diff = np.diff(np.eye(k), n=order, axis=0)
    return diff.T @ diff


def tensor_design(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product of two marginal design matrices."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1.shape[0] != b2.shape[0]:
        raise DimensionMismatch(
            f"row counts differ: {b1.shape[0]} vs {b2.shape[0]}"
        )
    n, k1 = b1.shape
    k2 = b2.shape[1]
    return (b1[:, :, None] * b2[:, None, :]).reshape(n, k1 * k2)


def _split_eigh(penalty: np.ndarray, null_dim: int):
    """Eigendecompose a PSD penalty and split null/positive eigenspaces."""
    eigvals, eigvecs = np.linalg.eigh(penalty)
    tol = _NULL_EIG_RTOL * eigvals[-1]
    null = eigvals <= tol
    if null.sum() != null_dim:
        raise RankError(
            f"penalty null space has numerical dimension {null.sum()}, "
            f"expected {null_dim}"
        )
    return eigvals, eigvecs, null


def _rotate_constant_first(null_basis: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rotate an orthonormal null basis so its first vector is the constant.

    Returns the rotated basis and whether the constant coefficient vector
    lies in the null space (true for difference penalties).
    """
    k, m = null_basis.shape
    const = np.full(k, 1.0 / np.sqrt(k))
    v = null_basis.T @ const
    norm = np.linalg.norm(v)
    if norm < 1.0 - 1e-8:
        return null_basis, False
    v = v / norm
    # Householder reflection sending e_1 to v
    w = v.copy()
    w[0] -= 1.0
    wn = np.linalg.norm(w)
    if wn < 1e-14:
        return null_basis, True
    refl = np.eye(m) - 2.0 * np.outer(w, w) / (wn**2)
    return null_basis @ refl, True


class SmoothBlock:
    """A smooth term mapped to identifiable fixed plus penalized columns.

    ``design`` is the centered constrained design at the data the block
    was built from.  The first ``fixed_columns`` columns carry the penalty
    null space minus the constant direction (absorbed by the intercept);
    the remaining ``random_columns`` columns have independent Gaussian
    priors whose precision for column c is
    ``sum_m penalty_loads[m, c] / tau_m**2``.  Univariate blocks have a
    single load row of ones, i.e. plain iid N(0, tau^2) coefficients.
    """

    def __init__(
        self,
        attribution: str,
        null_map: np.ndarray,
        u_random: np.ndarray,
        random_scale: np.ndarray,
        penalty_loads: np.ndarray,
        raw_design: np.ndarray,
        drop_constant: bool,
        spec: SmoothSpec | None = None,
        domains: tuple[tuple[float, float], ...] | None = None,
    ):
        self.attribution = attribution
        self.spec = spec
        self.domains = domains
        self.null_map = null_map
        self.u_random = u_random
        self.random_scale = random_scale
        self.penalty_loads = np.atleast_2d(penalty_loads)
        self.drop_constant = drop_constant
        uncentered = self._constrained_uncentered(raw_design)
        self.col_means = uncentered.mean(axis=0)
        self.design = uncentered - self.col_means

    @property
    def fixed_map(self) -> np.ndarray:
        return self.null_map[:, 1:] if self.drop_constant else self.null_map

    @property
    def fixed_columns(self) -> int:
        return self.fixed_map.shape[1]

    @property
    def random_columns(self) -> int:
        return self.u_random.shape[1]

    @property
    def n_columns(self) -> int:
        return self.fixed_columns + self.random_columns

    @property
    def n_penalties(self) -> int:
        return self.penalty_loads.shape[0]

    def _constrained_uncentered(self, raw: np.ndarray) -> np.ndarray:
        return np.hstack(
            [raw @ self.fixed_map, (raw @ self.u_random) * self.random_scale]
        )

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Map a raw basis design to centered constrained columns."""
        return self._constrained_uncentered(raw) - self.col_means

    def raw_design_at(self, x: np.ndarray, extrapolate: bool = True):
        """Raw basis design at new covariate values.

        Returns the design and a boolean extrapolation flag per row.
        Requires the block to have been built from a SmoothSpec.
        """
        if self.spec is None or self.domains is None:
            raise InvalidSpec("block was built from a bare design; no knots stored")
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        flags = np.zeros(x.shape[0], dtype=bool)
        margins = []
        for m in range(len(self.spec.covariates)):
            lo, hi = self.domains[m]
            flags |= (x[:, m] < lo) | (x[:, m] > hi)
            margins.append(
                bspline_design(
                    x[:, m], self.spec, margin=m, domain=(lo, hi), extrapolate=extrapolate
                )
            )
        raw = margins[0] if len(margins) == 1 else tensor_design(margins[0], margins[1])
        return raw, flags

    def design_at(self, x: np.ndarray, extrapolate: bool = True):
        """Centered constrained design at new covariate values."""
        raw, flags = self.raw_design_at(x, extrapolate=extrapolate)
        return self.transform(raw), flags

    def map_coefficients(self, beta: np.ndarray) -> np.ndarray:
        """Original-basis coefficients in [null, random] coordinates.

        Includes the constant null direction, so together with
        :meth:`uncentered_full_design` the mapped representation
        reproduces ``raw_design @ beta`` exactly.
        """
        beta = np.asarray(beta, dtype=float)
        c_null = self.null_map.T @ beta
        c_random = (self.u_random.T @ beta) / self.random_scale
        return np.concatenate([c_null, c_random])

    def uncentered_full_design(self, raw: np.ndarray) -> np.ndarray:
        """[null, random] design including the constant column, uncentered."""
        return np.hstack(
            [raw @ self.null_map, (raw @ self.u_random) * self.random_scale]
        )


def reparameterize(design: np.ndarray, penalty: np.ndarray, order: int,
                   attribution: str = "smooth") -> SmoothBlock:
    """Turn a penalized design into fixed plus iid-prior random columns.

    Eigen-decomposes ``penalty`` and scales penalized directions by
    ``1/sqrt(lambda)`` so their coefficients get iid N(0, tau^2) priors;
    null-space directions become unpenalized fixed columns after the
    constant direction is removed (sum-to-zero identifiability).
    """
    design = np.asarray(design, dtype=float)
    penalty = np.asarray(penalty, dtype=float)
    k = penalty.shape[0]
    if design.shape[1] != k:
        raise DimensionMismatch(
            f"design has {design.shape[1]} columns, penalty is {k} x {k}"
        )
    eigvals, eigvecs, null = _split_eigh(penalty, order)
    u_null, has_const = _rotate_constant_first(eigvecs[:, null])
    lam = eigvals[~null]
    return SmoothBlock(
        attribution,
        null_map=u_null,
        u_random=eigvecs[:, ~null],
        random_scale=1.0 / np.sqrt(lam),
        penalty_loads=np.ones((1, lam.size)),
        raw_design=design,
        drop_constant=has_const,
    )


def reparameterize_tensor(
    design: np.ndarray,
    penalty1: np.ndarray,
    penalty2: np.ndarray,
    order1: int,
    order2: int,
    attribution: str = "tensor",
) -> SmoothBlock:
    """Reparameterize a tensor-product design with anisotropic penalties.

    The two additive penalty components K1 (x) I and I (x) K2 share the
    Kronecker eigenbasis of the marginal decompositions, so each is
    diagonalized separately and combined; the joint null space becomes
    fixed columns.  Random columns are scaled to unit prior precision at
    tau1 = tau2 = 1 and keep two loads (l1, l2) per column, giving prior
    precision l1/tau1^2 + l2/tau2^2.
    """
    penalty1 = np.asarray(penalty1, dtype=float)
    penalty2 = np.asarray(penalty2, dtype=float)
    k1, k2 = penalty1.shape[0], penalty2.shape[0]
    design = np.asarray(design, dtype=float)
    if design.shape[1] != k1 * k2:
        raise DimensionMismatch(
            f"design has {design.shape[1]} columns, expected {k1 * k2}"
        )
    e1, u1, null1 = _split_eigh(penalty1, order1)
    e2, u2, null2 = _split_eigh(penalty2, order2)
    lam1 = np.where(np.repeat(null1, k2), 0.0, np.repeat(e1, k2))
    lam2 = np.where(np.tile(null2, k1), 0.0, np.tile(e2, k1))
    joint_null = np.repeat(null1, k2) & np.tile(null2, k1)
    u_joint = np.kron(u1, u2)
    u_null, has_const = _rotate_constant_first(u_joint[:, joint_null])
    keep = ~joint_null
    total = lam1[keep] + lam2[keep]
    return SmoothBlock(
        attribution,
        null_map=u_null,
        u_random=u_joint[:, keep],
        random_scale=1.0 / np.sqrt(total),
        penalty_loads=np.vstack([lam1[keep] / total, lam2[keep] / total]),
        raw_design=design,
        drop_constant=has_const,
    )


def build_smooth_block(
    x: np.ndarray, spec: SmoothSpec, attribution: str | None = None
) -> SmoothBlock:
    """Build a prediction-capable SmoothBlock from covariate data."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != len(spec.covariates):
        raise DimensionMismatch(
            f"{len(spec.covariates)} covariate column(s) expected, got {x.shape[1]}"
        )
    domains = spec.domain or tuple(infer_domain(x[:, m]) for m in range(x.shape[1]))
    margins = [
        bspline_design(x[:, m], spec, margin=m, domain=domains[m])
        for m in range(x.shape[1])
    ]
    label = attribution or spec.label()
    if not spec.is_tensor:
        penalty = difference_penalty(spec.k[0], spec.penalty_order)
        block = reparameterize(margins[0], penalty, spec.penalty_order, label)
    else:
        p1 = difference_penalty(spec.k[0], spec.penalty_order)
        p2 = difference_penalty(spec.k[1], spec.penalty_order)
        raw = tensor_design(margins[0], margins[1])
        block = reparameterize_tensor(
            raw, p1, p2, spec.penalty_order, spec.penalty_order, label
        )
    block.spec = spec
    block.domains = domains
    return block
