"""Model assembly: design matrices, priors, and the joint log-posterior.

Every ilr coordinate shares one term structure (intercept, linear and
dummy-coded effects, random intercepts, univariate and tensor smooths)
with coordinate-specific coefficients.  The likelihood is multivariate
Gaussian across coordinates with covariance diag(sigma) R diag(sigma),
the correlation matrix R carrying an LKJ prior through its Cholesky
factor.  Smooth and group coefficients use the non-centered form
(coefficient = scale * raw with raw ~ N(0,1)) so the sampler sees a
well-conditioned geometry.

The unconstrained sampling vector and the constrained reporting vector
share one block layout:

    [per coordinate: fixed betas, raw random coefficients]
    [per coordinate: log smoothing / group sds]
    [log residual sds]
    [correlation Cholesky parameters]

``constrain`` maps raws to actual coefficients, logs to sds, and the
Cholesky parameters to correlations, position by position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import (
    InvalidSpec,
    MissingCovariate,
    NonFiniteParameter,
    NonPositivePart,
    SingleLevelFactor,
    UnknownColumn,
)
from .ilr import build_basis, ilr_sample
from .simplex import CompositionSample
from .smooth import SmoothBlock, SmoothSpec, build_smooth_block

_LOG_2PI = math.log(2.0 * math.pi)


# --- model terms -----------------------------------------------------------


@dataclass(frozen=True)
class Intercept:
    pass


@dataclass(frozen=True)
class Linear:
    """A continuous covariate, or a dummy-coded factor when ``reference``
    names the baseline level."""

    covariate: str
    reference: str | None = None


@dataclass(frozen=True)
class RandomIntercept:
    group: str


@dataclass(frozen=True)
class Smooth:
    spec: SmoothSpec

    def __post_init__(self):
        if self.spec.is_tensor:
            raise InvalidSpec("Smooth takes a univariate SmoothSpec; use Tensor")


@dataclass(frozen=True)
class Tensor:
    spec: SmoothSpec

    def __post_init__(self):
        if not self.spec.is_tensor:
            raise InvalidSpec("Tensor needs a two-covariate SmoothSpec")


@dataclass(frozen=True)
class PriorSpec:
    """Prior settings: Gaussian fixed effects, half-Student-t scales, LKJ
    correlations.  ``None`` scales resolve per coordinate to
    max(2.5, sd of that ilr coordinate)."""

    fixed_sd: float = 10.0
    sd_df: float = 3.0
    sd_scale: float | None = None
    smooth_sd_df: float = 3.0
    smooth_sd_scale: float | None = None
    sigma_df: float = 3.0
    sigma_scale: float | None = None
    lkj_eta: float = 1.0

    def __post_init__(self):
        for name in ("fixed_sd", "sd_df", "smooth_sd_df", "sigma_df", "lkj_eta"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be strictly positive")
        for name in ("sd_scale", "smooth_sd_scale", "sigma_scale"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidSpec(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ModelSpec:
    """Term structure shared by every ilr coordinate."""

    dimension: int
    terms: tuple
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.dimension < 2:
            raise InvalidSpec("composition dimension must be >= 2")
        n_icpt = sum(isinstance(t, Intercept) for t in self.terms)
        if n_icpt != 1:
            raise InvalidSpec(f"exactly one Intercept term required, got {n_icpt}")
        object.__setattr__(self, "terms", tuple(self.terms))


# --- dataset ----------------------------------------------------------------


def _level_key(value):
    try:
        return (0, float(value), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(value))


@dataclass
class Dataset:
    """Tabular data with designated composition columns.

    Composition rows are validated (strictly positive) and closed to
    ``kappa`` on construction, tolerating data-entry rounding in the
    input file.
    """

    frame: pd.DataFrame
    composition_cols: list[str]
    kappa: float = 1.0

    def __post_init__(self):
        missing = [c for c in self.composition_cols if c not in self.frame.columns]
        if missing:
            raise UnknownColumn(f"composition columns not in data: {missing}")
        if len(self.composition_cols) < 2:
            raise InvalidSpec("a composition needs at least two columns")
        comp = self.frame[self.composition_cols].to_numpy(dtype=float)
        if np.any(~np.isfinite(comp)) or np.any(comp <= 0):
            raise NonPositivePart("composition parts must be finite and positive")
        sums = comp.sum(axis=1)
        if np.any(np.abs(sums / self.kappa - 1.0) > 1e-6):
            raise NonPositivePart(
                "composition rows do not sum to kappa within rounding tolerance"
            )
        comp = self.kappa * comp / sums[:, None]
        self.frame = self.frame.copy()
        self.frame[self.composition_cols] = comp

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def dimension(self) -> int:
        return len(self.composition_cols)

    def compositions(self) -> CompositionSample:
        raw = self.frame[self.composition_cols].to_numpy(dtype=float)
        return CompositionSample(raw / self.kappa, 1.0)

    def ilr_matrix(self) -> np.ndarray:
        return ilr_sample(self.compositions(), build_basis(self.dimension))

    def column(self, name: str) -> np.ndarray:
        if name not in self.frame.columns:
            raise UnknownColumn(f"column {name!r} not in dataset")
        col = self.frame[name]
        if col.isna().any():
            raise InvalidSpec(f"column {name!r} contains missing values")
        return col.to_numpy()


# --- layout -----------------------------------------------------------------


@dataclass(frozen=True)
class ParameterLayout:
    """Block offsets shared by the unconstrained and constrained vectors."""

    n_coords: int
    n_fixed: int
    n_random: int
    n_scales: int
    names: tuple[str, ...]

    @property
    def n_coef(self) -> int:
        return self.n_fixed + self.n_random

    @property
    def dim(self) -> int:
        return len(self.names)

    def coef_slice(self, d: int) -> slice:
        return slice(d * self.n_coef, (d + 1) * self.n_coef)

    def beta_slice(self, d: int) -> slice:
        return slice(d * self.n_coef, d * self.n_coef + self.n_fixed)

    def raw_slice(self, d: int) -> slice:
        return slice(d * self.n_coef + self.n_fixed, (d + 1) * self.n_coef)

    def scale_slice(self, d: int) -> slice:
        base = self.n_coords * self.n_coef
        return slice(base + d * self.n_scales, base + (d + 1) * self.n_scales)

    @property
    def sigma_slice(self) -> slice:
        base = self.n_coords * (self.n_coef + self.n_scales)
        return slice(base, base + self.n_coords)

    @property
    def corr_slice(self) -> slice:
        base = self.n_coords * (self.n_coef + self.n_scales) + self.n_coords
        return slice(base, self.dim)

    @property
    def n_corr(self) -> int:
        return self.n_coords * (self.n_coords - 1) // 2


# --- design bundle ----------------------------------------------------------


@dataclass
class _RandomGroupInfo:
    label: str
    kind: str  # "smooth" or "ranint"
    columns: slice  # into the random block (0-based within random columns)
    scale_params: list[int]  # indices into the per-coordinate scale block
    levels: tuple[str, ...] | None = None


class DesignBundle:
    """Immutable design and prior information for one model on one dataset."""

    def __init__(self, data: Dataset, spec: ModelSpec):
        if spec.dimension != data.dimension:
            raise InvalidSpec(
                f"model is for D={spec.dimension}, data has D={data.dimension}"
            )
        self.spec = spec
        self.n_obs = data.n_rows
        self.n_coords = spec.dimension - 1
        self.basis = build_basis(spec.dimension)
        self.ilr_data = data.ilr_matrix()
        self.composition_cols = list(data.composition_cols)
        self.kappa = data.kappa

        fixed_cols: list[np.ndarray] = []
        fixed_names: list[str] = []
        random_cols: list[np.ndarray] = []
        random_names: list[str] = []
        self.smooth_blocks: dict[str, SmoothBlock] = {}
        self.factor_levels: dict[str, tuple] = {}
        self.group_levels: dict[str, tuple] = {}
        self.random_groups: list[_RandomGroupInfo] = []
        scale_names: list[str] = []
        scale_kinds: list[str] = []  # "smooth" or "ranint", for prior resolution
        self.term_columns: dict[str, dict[str, list[int]]] = {}

        loads_rows: list[np.ndarray] = []

        for term in spec.terms:
            t_fixed: list[int] = []
            t_random: list[int] = []
            if isinstance(term, Intercept):
                label = "Intercept"
                t_fixed.append(len(fixed_names))
                fixed_cols.append(np.ones(self.n_obs))
                fixed_names.append("Intercept")
            elif isinstance(term, Linear) and term.reference is None:
                label = term.covariate
                x = np.asarray(data.column(term.covariate), dtype=float)
                if not np.all(np.isfinite(x)):
                    raise InvalidSpec(f"covariate {term.covariate!r} not finite")
                t_fixed.append(len(fixed_names))
                fixed_cols.append(x)
                fixed_names.append(term.covariate)
            elif isinstance(term, Linear):
                label = term.covariate
                raw = data.column(term.covariate)
                levels = sorted({str(v) for v in raw}, key=_level_key)
                if len(levels) < 2:
                    raise SingleLevelFactor(
                        f"factor {term.covariate!r} has {len(levels)} observed level(s)"
                    )
                ref = str(term.reference)
                if ref not in levels:
                    raise InvalidSpec(
                        f"reference level {ref!r} not observed in {term.covariate!r}"
                    )
                self.factor_levels[term.covariate] = (ref, tuple(levels))
                as_str = np.array([str(v) for v in raw])
                for lev in levels:
                    if lev == ref:
                        continue
                    t_fixed.append(len(fixed_names))
                    fixed_cols.append((as_str == lev).astype(float))
                    fixed_names.append(f"{term.covariate}={lev}")
            elif isinstance(term, RandomIntercept):
                label = f"r({term.group})"
                raw = data.column(term.group)
                levels = sorted({str(v) for v in raw}, key=_level_key)
                if len(levels) < 2:
                    raise SingleLevelFactor(
                        f"grouping factor {term.group!r} has {len(levels)} level(s)"
                    )
                self.group_levels[term.group] = tuple(levels)
                as_str = np.array([str(v) for v in raw])
                start = len(random_names)
                for lev in levels:
                    t_random.append(len(random_names))
                    random_cols.append((as_str == lev).astype(float))
                    random_names.append(f"{label}={lev}")
                scale_idx = len(scale_names)
                scale_names.append(f"sd.{label}")
                scale_kinds.append("ranint")
                self.random_groups.append(
                    _RandomGroupInfo(
                        label, "ranint", slice(start, len(random_names)),
                        [scale_idx], tuple(levels),
                    )
                )
            elif isinstance(term, (Smooth, Tensor)):
                sspec = term.spec
                label = sspec.label()
                x = np.column_stack(
                    [np.asarray(data.column(c), dtype=float) for c in sspec.covariates]
                )
                block = build_smooth_block(x, sspec, label)
                self.smooth_blocks[label] = block
                for i in range(block.fixed_columns):
                    t_fixed.append(len(fixed_names))
                    fixed_cols.append(block.design[:, i])
                    fixed_names.append(f"{label}.null{i + 1}")
                start = len(random_names)
                for i in range(block.random_columns):
                    t_random.append(len(random_names))
                    random_cols.append(block.design[:, block.fixed_columns + i])
                    random_names.append(f"{label}.w{i + 1}")
                scale_idx = []
                for m in range(block.n_penalties):
                    scale_idx.append(len(scale_names))
                    suffix = f".tau{m + 1}" if block.n_penalties > 1 else ".tau"
                    scale_names.append(f"{label}{suffix}")
                    scale_kinds.append("smooth")
                self.random_groups.append(
                    _RandomGroupInfo(
                        label, "smooth", slice(start, len(random_names)), scale_idx
                    )
                )
                loads_rows.append((label, block.penalty_loads))
            else:
                raise InvalidSpec(f"unknown term type {type(term).__name__}")
            self.term_columns[label] = {"fixed": t_fixed, "random": t_random}

        self.n_fixed = len(fixed_names)
        self.n_random = len(random_names)
        self.n_scales = len(scale_names)
        self.fixed_names = tuple(fixed_names)
        self.random_names = tuple(random_names)
        self.scale_names = tuple(scale_names)
        self.scale_kinds = tuple(scale_kinds)

        design = fixed_cols + random_cols
        self.design = np.ascontiguousarray(np.column_stack(design))
        self.design_t = np.ascontiguousarray(self.design.T)

        # load matrix: per scale parameter, its weight on each random column
        self.load_matrix = np.zeros((self.n_scales, self.n_random))
        for info in self.random_groups:
            if info.kind == "ranint":
                self.load_matrix[info.scale_params[0], info.columns] = 1.0
            else:
                loads = self.smooth_blocks[info.label].penalty_loads
                for m, p in enumerate(info.scale_params):
                    self.load_matrix[p, info.columns] = loads[m]

        # prior scales resolved per coordinate
        q = self.n_coords
        coord_sd = self.ilr_data.std(axis=0, ddof=1) if self.n_obs > 1 else np.ones(q)
        pr = spec.priors
        auto = np.maximum(2.5, coord_sd)
        self.sigma_prior_scale = (
            np.full(q, pr.sigma_scale) if pr.sigma_scale is not None else auto.copy()
        )
        self.sigma_prior_df = pr.sigma_df
        self.scale_prior_df = np.empty(self.n_scales)
        self.scale_prior_scale = np.empty((q, self.n_scales))
        for i, kind in enumerate(scale_kinds):
            if kind == "smooth":
                self.scale_prior_df[i] = pr.smooth_sd_df
                self.scale_prior_scale[:, i] = (
                    pr.smooth_sd_scale if pr.smooth_sd_scale is not None else auto
                )
            else:
                self.scale_prior_df[i] = pr.sd_df
                self.scale_prior_scale[:, i] = (
                    pr.sd_scale if pr.sd_scale is not None else auto
                )

        self.layout = ParameterLayout(
            n_coords=q,
            n_fixed=self.n_fixed,
            n_random=self.n_random,
            n_scales=self.n_scales,
            names=tuple(self._build_names()),
        )

    # -- names ---------------------------------------------------------------

    def _build_names(self) -> list[str]:
        q = self.n_coords
        names: list[str] = []
        for d in range(q):
            names.extend(f"b[{d + 1}].{n}" for n in self.fixed_names)
            names.extend(f"{n}[{d + 1}]" for n in self.random_names)
        for d in range(q):
            names.extend(f"{n}[{d + 1}]" for n in self.scale_names)
        names.extend(f"sigma[{d + 1}]" for d in range(q))
        for j in range(q):
            for k in range(j + 1, q):
                names.append(f"rho[{j + 1},{k + 1}]")
        return names

    # -- design for new data --------------------------------------------------

    def design_for(self, frame: pd.DataFrame, extrapolate: bool = True):
        """Design matrix for new rows, plus an extrapolation flag per row.

        Unseen random-intercept levels get zero columns (population-level
        prediction); unseen factor levels are an error.
        """
        n = len(frame)
        cols = np.zeros((n, self.n_fixed + self.n_random))
        flags = np.zeros(n, dtype=bool)

        def need(name):
            if name not in frame.columns:
                raise MissingCovariate(f"prediction data lacks column {name!r}")
            col = frame[name]
            if col.isna().any():
                raise InvalidSpec(f"column {name!r} contains missing values")
            return col.to_numpy()

        fixed_idx = 0
        random_idx = 0
        for term in self.spec.terms:
            if isinstance(term, Intercept):
                cols[:, fixed_idx] = 1.0
                fixed_idx += 1
            elif isinstance(term, Linear) and term.reference is None:
                cols[:, fixed_idx] = np.asarray(need(term.covariate), dtype=float)
                fixed_idx += 1
            elif isinstance(term, Linear):
                ref, levels = self.factor_levels[term.covariate]
                values = np.array([str(v) for v in need(term.covariate)])
                unseen = set(values) - set(levels)
                if unseen:
                    raise InvalidSpec(
                        f"unseen level(s) {sorted(unseen)} in factor {term.covariate!r}"
                    )
                for lev in levels:
                    if lev == ref:
                        continue
                    cols[:, fixed_idx] = (values == lev).astype(float)
                    fixed_idx += 1
            elif isinstance(term, RandomIntercept):
                levels = self.group_levels[term.group]
                values = np.array([str(v) for v in need(term.group)])
                for lev in levels:
                    cols[:, self.n_fixed + random_idx] = (values == lev).astype(float)
                    random_idx += 1
            else:
                sspec = term.spec
                block = self.smooth_blocks[sspec.label()]
                x = np.column_stack(
                    [np.asarray(need(c), dtype=float) for c in sspec.covariates]
                )
                sub, sub_flags = block.design_at(x, extrapolate=extrapolate)
                flags |= sub_flags
                nf, nr = block.fixed_columns, block.random_columns
                cols[:, fixed_idx : fixed_idx + nf] = sub[:, :nf]
                cols[:, self.n_fixed + random_idx : self.n_fixed + random_idx + nr] = (
                    sub[:, nf:]
                )
                fixed_idx += nf
                random_idx += nr
        return cols, flags

    # -- parameter handling ----------------------------------------------------

    def _unpack(self, params: np.ndarray):
        lay = self.layout
        q = self.n_coords
        betas = np.empty((self.n_fixed, q))
        raws = np.empty((self.n_random, q))
        scales = np.empty((q, self.n_scales))
        with np.errstate(over="ignore"):
            for d in range(q):
                betas[:, d] = params[lay.beta_slice(d)]
                raws[:, d] = params[lay.raw_slice(d)]
                scales[d] = np.exp(params[lay.scale_slice(d)])
            sigma = np.exp(params[lay.sigma_slice])
        z = params[lay.corr_slice]
        return betas, raws, scales, sigma, z

    def _column_sds(self, scales_d: np.ndarray) -> np.ndarray:
        """Prior sds of the random design columns given one coordinate's
        scale parameters."""
        if self.n_random == 0:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            prec = (scales_d**-2) @ self.load_matrix
            return prec**-0.5

    def coefficients(self, params: np.ndarray) -> np.ndarray:
        """Actual coefficient matrix (columns of the design) per coordinate."""
        betas, raws, scales, _, _ = self._unpack(params)
        coef = np.empty((self.n_fixed + self.n_random, self.n_coords))
        for d in range(self.n_coords):
            coef[: self.n_fixed, d] = betas[:, d]
            coef[self.n_fixed :, d] = self._column_sds(scales[d]) * raws[:, d]
        return coef

    def constrain(self, params: np.ndarray) -> np.ndarray:
        """Map an unconstrained vector to the constrained reporting scale."""
        params = np.asarray(params, dtype=float)
        lay = self.layout
        out = np.empty(lay.dim)
        betas, raws, scales, sigma, z = self._unpack(params)
        for d in range(self.n_coords):
            out[lay.beta_slice(d)] = betas[:, d]
            out[lay.raw_slice(d)] = self._column_sds(scales[d]) * raws[:, d]
            out[lay.scale_slice(d)] = scales[d]
        out[lay.sigma_slice] = sigma
        if lay.n_corr:
            chol = _corr_cholesky(z, self.n_coords)[0]
            corr = chol @ chol.T
            out[lay.corr_slice] = corr[np.triu_indices(self.n_coords, k=1)]
        return out

    def correlation_cholesky(self, params: np.ndarray) -> np.ndarray:
        z = np.asarray(params, dtype=float)[self.layout.corr_slice]
        return _corr_cholesky(z, self.n_coords)[0]


def build_design(data: Dataset, spec: ModelSpec) -> DesignBundle:
    """Resolve a model specification against a dataset."""
    return DesignBundle(data, spec)


# --- correlation Cholesky transform ----------------------------------------


def _corr_cholesky(z: np.ndarray, q: int):
    """Unconstrained vector -> Cholesky factor of a correlation matrix.

    Returns (L, xs, accs, log_jacobian) where xs and accs hold the
    per-entry tanh values and remaining squared norms needed by the
    reverse pass.  log_jacobian is -inf when an entry saturates, which
    callers treat as a zero-density point.
    """
    chol = np.zeros((q, q))
    chol[0, 0] = 1.0
    xs: list[np.ndarray] = [np.empty(0)]
    accs: list[np.ndarray] = [np.empty(1)]
    log_jac = 0.0
    pos = 0
    with np.errstate(divide="ignore"):
        for r in range(1, q):
            x_row = np.tanh(z[pos : pos + r])
            pos += r
            acc_row = np.empty(r + 1)
            acc = 1.0
            for j in range(r):
                acc_row[j] = acc
                chol[r, j] = x_row[j] * math.sqrt(acc)
                log_jac += 0.5 * float(np.log(acc)) + float(np.log1p(-x_row[j] ** 2))
                acc = acc * (1.0 - x_row[j] ** 2)
            acc_row[r] = acc
            chol[r, r] = math.sqrt(acc)
            xs.append(x_row)
            accs.append(acc_row)
    return chol, xs, accs, log_jac


def _corr_cholesky_backward(grad_chol: np.ndarray, xs, accs, q: int) -> np.ndarray:
    """Reverse pass through the correlation Cholesky construction.

    ``grad_chol`` must already contain all direct derivatives with
    respect to the entries of L (likelihood and LKJ prior); the log
    Jacobian terms are added here.
    """
    grads = []
    for r in range(1, q):
        x_row, acc_row = xs[r], accs[r]
        gz = np.empty(r)
        a_acc = grad_chol[r, r] / (2.0 * math.sqrt(acc_row[r]))
        for j in range(r - 1, -1, -1):
            x, acc = x_row[j], acc_row[j]
            sqrt_acc = math.sqrt(acc)
            one_m_x2 = 1.0 - x * x
            gx = (
                grad_chol[r, j] * sqrt_acc
                - a_acc * 2.0 * x * acc
                - 2.0 * x / one_m_x2
            )
            a_acc = (
                grad_chol[r, j] * x / (2.0 * sqrt_acc)
                + a_acc * one_m_x2
                + 0.5 / acc
            )
            gz[j] = gx * one_m_x2
        grads.append(gz)
    return np.concatenate(grads) if grads else np.empty(0)


# --- densities ---------------------------------------------------------------


def _half_t_logpdf(t: np.ndarray, df, scale) -> np.ndarray:
    # half-Student-t on t > 0; normalizing constant included
    return (
        math.log(2.0)
        + gammaln((df + 1.0) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * np.log(df * math.pi * scale**2)
        - (df + 1.0) / 2.0 * np.log1p(t**2 / (df * scale**2))
    )


def _half_t_dlogpdf(t: np.ndarray, df, scale) -> np.ndarray:
    return -(df + 1.0) * t / (df * scale**2 + t**2)


# --- likelihood and posterior ------------------------------------------------


def _check_params(params: np.ndarray, dim: int) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (dim,):
        raise NonFiniteParameter(
            f"parameter vector has shape {params.shape}, expected ({dim},)"
        )
    if not np.all(np.isfinite(params)):
        raise NonFiniteParameter("parameter vector contains non-finite entries")
    return params


class _ModelState(NamedTuple):
    betas: np.ndarray
    raws: np.ndarray
    scales: np.ndarray
    sigma: np.ndarray
    col_sds: np.ndarray
    coef: np.ndarray
    mean: np.ndarray
    chol: np.ndarray
    xs: list
    accs: list
    log_jac: float
    chol_cov: np.ndarray

    @property
    def finite(self) -> bool:
        return (
            np.isfinite(self.log_jac)
            and bool(np.all(np.diag(self.chol) > 0))
            and bool(np.all(np.isfinite(self.sigma)))
            and bool(np.all(np.isfinite(self.col_sds)))
            and bool(np.all(np.isfinite(self.mean)))
        )


def _model_state(bundle: DesignBundle, params: np.ndarray) -> _ModelState:
    betas, raws, scales, sigma, z = bundle._unpack(params)
    q = bundle.n_coords
    col_sds = np.empty((bundle.n_random, q))
    coef = np.empty((bundle.n_fixed + bundle.n_random, q))
    with np.errstate(over="ignore", invalid="ignore"):
        for d in range(q):
            col_sds[:, d] = bundle._column_sds(scales[d])
            coef[: bundle.n_fixed, d] = betas[:, d]
            coef[bundle.n_fixed :, d] = col_sds[:, d] * raws[:, d]
        mean = bundle.design @ coef
    chol, xs, accs, log_jac = _corr_cholesky(z, q)
    with np.errstate(invalid="ignore", over="ignore"):
        chol_cov = sigma[:, None] * chol
    return _ModelState(
        betas, raws, scales, sigma, col_sds, coef, mean, chol, xs, accs, log_jac, chol_cov
    )


def log_likelihood(params: np.ndarray, bundle: DesignBundle,
                   ilr_data: np.ndarray) -> float:
    """Multivariate Gaussian log-likelihood of the ilr data.

    ``params`` is the flat unconstrained sampling vector.
    """
    params = _check_params(params, bundle.layout.dim)
    state = _model_state(bundle, params)
    ilr_data = np.asarray(ilr_data, dtype=float)
    n, q = ilr_data.shape
    if state.mean.shape != ilr_data.shape:
        raise NonFiniteParameter(
            f"ilr data shape {ilr_data.shape} does not match design {state.mean.shape}"
        )
    if not state.finite:
        return -np.inf
    resid = ilr_data - state.mean
    half_logdet = np.log(state.sigma).sum() + np.log(np.diag(state.chol)).sum()
    white = solve_triangular(state.chol_cov, resid.T, lower=True)
    return float(
        -0.5 * n * q * _LOG_2PI - n * half_logdet - 0.5 * np.sum(white**2)
    )


def log_posterior_and_gradient(
    params: np.ndarray, bundle: DesignBundle, ilr_data: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Joint log-posterior (likelihood + priors + transform Jacobians) and
    its exact gradient with respect to the unconstrained vector.

    With ``ilr_data`` None the prior alone is evaluated.
    """
    lay = bundle.layout
    params = _check_params(params, lay.dim)
    q = bundle.n_coords
    state = _model_state(bundle, params)
    if not state.finite:
        return -np.inf, np.zeros(lay.dim)
    betas, raws, scales, sigma = state.betas, state.raws, state.scales, state.sigma
    col_sds, chol, chol_cov = state.col_sds, state.chol, state.chol_cov

    grad = np.zeros(lay.dim)
    logp = 0.0

    # --- likelihood ---
    grad_mean = None
    grad_sigma_lik = np.zeros(q)
    grad_chol = np.zeros((q, q))
    if ilr_data is not None:
        ilr_data = np.asarray(ilr_data, dtype=float)
        n = ilr_data.shape[0]
        resid = ilr_data - state.mean
        half_logdet = np.log(sigma).sum() + np.log(np.diag(chol)).sum()
        white = solve_triangular(chol_cov, resid.T, lower=True)
        logp += -0.5 * n * q * _LOG_2PI - n * half_logdet - 0.5 * np.sum(white**2)
        # grad wrt mean: residual' Sigma^{-1}, row-wise
        sigma_inv_resid = solve_triangular(chol_cov.T, white, lower=False)  # q x N
        grad_mean = sigma_inv_resid.T
        # grad wrt covariance entries: G = (Sigma^-1 S Sigma^-1 - N Sigma^-1)/2
        prec = solve_triangular(
            chol_cov.T,
            solve_triangular(chol_cov, np.eye(q), lower=True),
            lower=False,
        )
        grad_cov = 0.5 * (sigma_inv_resid @ sigma_inv_resid.T - n * prec)
        corr = chol @ chol.T
        grad_sigma_lik = 2.0 * np.einsum("dk,k,dk->d", grad_cov, sigma, corr)
        grad_corr = sigma[:, None] * grad_cov * sigma[None, :]
        grad_chol = 2.0 * np.tril(grad_corr @ chol)

    # --- coefficient-level gradients ---
    if grad_mean is not None:
        grad_coef = bundle.design_t @ grad_mean
    else:
        grad_coef = np.zeros((bundle.n_fixed + bundle.n_random, q))

    fixed_var = bundle.spec.priors.fixed_sd**2
    n_fixed = bundle.n_fixed
    for d in range(q):
        gb = grad_coef[:n_fixed, d] - betas[:, d] / fixed_var
        grad[lay.beta_slice(d)] = gb
        logp += -0.5 * np.sum(betas[:, d] ** 2) / fixed_var - n_fixed * (
            0.5 * _LOG_2PI + math.log(bundle.spec.priors.fixed_sd)
        )
        if bundle.n_random:
            ga = grad_coef[n_fixed:, d]
            sds = col_sds[:, d]
            grad[lay.raw_slice(d)] = ga * sds - raws[:, d]
            logp += -0.5 * np.sum(raws[:, d] ** 2) - 0.5 * bundle.n_random * _LOG_2PI
            # d logp / d scale_p through the column sds
            gsd = ga * raws[:, d]  # dll/d sd_c
            s3 = sds**3
            gscale_lik = (bundle.load_matrix * (gsd * s3)[None, :]).sum(axis=1) / (
                scales[d] ** 3
            )
            t = scales[d]
            df = bundle.scale_prior_df
            a = bundle.scale_prior_scale[d]
            logp += float(np.sum(_half_t_logpdf(t, df, a))) + float(
                params[lay.scale_slice(d)].sum()
            )
            grad[lay.scale_slice(d)] = t * (gscale_lik + _half_t_dlogpdf(t, df, a)) + 1.0

    # --- residual sds ---
    df_s = bundle.sigma_prior_df
    a_s = bundle.sigma_prior_scale
    logp += float(np.sum(_half_t_logpdf(sigma, df_s, a_s))) + float(
        params[lay.sigma_slice].sum()
    )
    grad[lay.sigma_slice] = (
        sigma * (grad_sigma_lik + _half_t_dlogpdf(sigma, df_s, a_s)) + 1.0
    )

    # --- correlation block: LKJ prior + transform Jacobian ---
    if lay.n_corr:
        eta = bundle.spec.priors.lkj_eta
        diag = np.diag(chol)[1:]
        exponents = np.array([q + 2.0 * eta - 3.0 - r for r in range(1, q)])
        logp += float(np.sum(exponents * np.log(diag))) + state.log_jac
        for r in range(1, q):
            grad_chol[r, r] += exponents[r - 1] / chol[r, r]
        grad[lay.corr_slice] = _corr_cholesky_backward(grad_chol, state.xs, state.accs, q)

    if not np.isfinite(logp):
        return -np.inf, np.zeros(lay.dim)
    return float(logp), grad


def make_target(bundle: DesignBundle, ilr_data: np.ndarray | None = None):
    """Log-density callable for the sampler, with data bound in."""
    data = bundle.ilr_data if ilr_data is None else np.asarray(ilr_data, dtype=float)

    def target(params: np.ndarray):
        return log_posterior_and_gradient(params, bundle, data)

    return target


def pointwise_log_likelihood(
    params: np.ndarray, bundle: DesignBundle, ilr_data: np.ndarray
) -> np.ndarray:
    """Per-observation Gaussian log-density for one draw (WAIC input)."""
    params = _check_params(params, bundle.layout.dim)
    state = _model_state(bundle, params)
    ilr_data = np.asarray(ilr_data, dtype=float)
    q = bundle.n_coords
    resid = ilr_data - state.mean
    half_logdet = np.log(state.sigma).sum() + np.log(np.diag(state.chol)).sum()
    white = solve_triangular(state.chol_cov, resid.T, lower=True)
    return -0.5 * q * _LOG_2PI - half_logdet - 0.5 * np.sum(white**2, axis=0)


def predictor_means(
    params: np.ndarray, bundle: DesignBundle, design: np.ndarray | None = None
) -> np.ndarray:
    """Linear predictor matrix (rows x coordinates) for one draw."""
    params = _check_params(params, bundle.layout.dim)
    coef = bundle.coefficients(params)
    return (bundle.design if design is None else design) @ coef


def term_effect(
    params: np.ndarray, bundle: DesignBundle, label: str,
    design: np.ndarray | None = None,
) -> np.ndarray:
    """Contribution of one named term to the predictor, per coordinate."""
    if label not in bundle.term_columns:
        raise UnknownColumn(
            f"model has no term {label!r}; terms: {sorted(bundle.term_columns)}"
        )
    cols = bundle.term_columns[label]
    idx = list(cols["fixed"]) + [bundle.n_fixed + i for i in cols["random"]]
    coef = bundle.coefficients(_check_params(params, bundle.layout.dim))
    x = bundle.design if design is None else design
    return x[:, idx] @ coef[idx, :]
