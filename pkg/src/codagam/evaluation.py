"""Model comparison: WAIC and Bayesian R-squared measures for ilr models.

The compositional R-squared works on the total variance of the ilr
coordinates (sum of per-coordinate variances), giving one explained-
variability number per posterior draw.  Residual variance comes either
from realized residuals per draw (residual-based, "BR") or from the
posterior draws of the modeled coordinate variances (model-based, "BM").
Draw vectors of two models are compared by the fraction of draw pairs
where one is at least as large as the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    EmptyDraws,
    InsufficientDraws,
    KindMismatch,
    NonFiniteLogLik,
    NonPositiveVariance,
    ShapeMismatch,
)

RESIDUAL_BASED = "residual-based"
MODEL_BASED = "model-based"


@dataclass(frozen=True)
class R2Draws:
    """Per-draw explained-variability values in [0, 1]."""

    values: np.ndarray
    kind: str
    label: str = ""
    degenerate: np.ndarray | None = None  # draws where var_fit = var_res = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise EmptyDraws("R2 draws must be a nonempty vector")
        if np.any(values < 0) or np.any(values > 1):
            raise ShapeMismatch("R2 draws must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_draws(self) -> int:
        return self.values.size

    def summary(self) -> dict:
        q = np.quantile(self.values, [0.025, 0.5, 0.975])
        return {
            "kind": self.kind,
            "label": self.label,
            "mean": float(self.values.mean()),
            "sd": float(self.values.std(ddof=1)) if self.n_draws > 1 else 0.0,
            "q2.5": float(q[0]),
            "q50": float(q[1]),
            "q97.5": float(q[2]),
        }


@dataclass(frozen=True)
class ComparisonResult:
    """P(R2_a >= R2_b) with the credible-level verdict."""

    probability: float
    alpha: float
    verdict: str
    label_a: str = ""
    label_b: str = ""
    n_pairs: int = 0

    def as_dict(self) -> dict:
        return {
            "model_a": self.label_a,
            "model_b": self.label_b,
            "probability": self.probability,
            "alpha": self.alpha,
            "verdict": self.verdict,
            "n_pairs": self.n_pairs,
        }


def waic(pointwise: np.ndarray) -> tuple[float, float, float]:
    """(waic, lppd, p_waic) from an S x N pointwise log-likelihood matrix.

    lppd sums log mean predictive density per observation (log-sum-exp
    over draws); the effective-parameter penalty is the per-observation
    variance of the log-densities with the S-1 divisor.
    """
    pointwise = np.asarray(pointwise, dtype=float)
    if pointwise.ndim != 2:
        raise ShapeMismatch(f"expected S x N matrix, got shape {pointwise.shape}")
    n_draws = pointwise.shape[0]
    if n_draws < 2:
        raise InsufficientDraws("WAIC needs at least two draws")
    if not np.all(np.isfinite(pointwise)):
        raise NonFiniteLogLik("pointwise log-likelihood contains non-finite entries")
    lppd = float(np.sum(logsumexp(pointwise, axis=0) - np.log(n_draws)))
    p_waic = float(np.sum(pointwise.var(axis=0, ddof=1)))
    return -2.0 * lppd + 2.0 * p_waic, lppd, p_waic


def _variance_over_n(matrix: np.ndarray) -> np.ndarray:
    """Unbiased variance over the observation axis of an S x N x D array,
    summed over coordinates: the per-draw total variance."""
    return matrix.var(axis=1, ddof=1).sum(axis=-1)


def br_coda_r2(
    pred_mean_draws: np.ndarray, observed_ilr: np.ndarray, label: str = ""
) -> R2Draws:
    """Residual-based compositional R-squared.

    ``pred_mean_draws`` has shape (S, N, D-1); residual variance for draw
    s is the total variance of the realized residuals against the
    observed ilr coordinates.
    """
    pred = np.asarray(pred_mean_draws, dtype=float)
    obs = np.asarray(observed_ilr, dtype=float)
    if pred.ndim != 3:
        raise ShapeMismatch(f"pred_mean_draws must be S x N x q, got {pred.shape}")
    if obs.shape != pred.shape[1:]:
        raise ShapeMismatch(
            f"observed ilr shape {obs.shape} does not match draws {pred.shape[1:]}"
        )
    if pred.shape[0] < 2 or pred.shape[1] < 2:
        raise InsufficientDraws("need S >= 2 draws and N >= 2 observations")
    var_fit = _variance_over_n(pred)
    var_res = _variance_over_n(obs[None, :, :] - pred)
    total = var_fit + var_res
    degenerate = total == 0.0
    values = np.divide(var_fit, total, out=np.zeros_like(total), where=~degenerate)
    return R2Draws(values, RESIDUAL_BASED, label,
                   degenerate if degenerate.any() else None)


def bm_coda_r2(
    pred_mean_draws: np.ndarray, sigma_diag_draws: np.ndarray, label: str = ""
) -> R2Draws:
    """Model-based compositional R-squared.

    ``sigma_diag_draws`` has shape (S, D-1) and holds the posterior draws
    of the ilr coordinate *variances* (the covariance diagonal).
    """
    pred = np.asarray(pred_mean_draws, dtype=float)
    variances = np.asarray(sigma_diag_draws, dtype=float)
    if pred.ndim != 3:
        raise ShapeMismatch(f"pred_mean_draws must be S x N x q, got {pred.shape}")
    if variances.shape != (pred.shape[0], pred.shape[2]):
        raise ShapeMismatch(
            f"variance draws shape {variances.shape} does not match {pred.shape}"
        )
    if np.any(variances <= 0):
        raise NonPositiveVariance("modeled coordinate variances must be positive")
    var_fit = _variance_over_n(pred)
    var_res = variances.sum(axis=1)
    return R2Draws(var_fit / (var_fit + var_res), MODEL_BASED, label)


def univariate_bayes_r2(
    pred_mean_draws: np.ndarray,
    residual_draws: np.ndarray | None = None,
    sigma2_draws: np.ndarray | None = None,
    label: str = "",
) -> R2Draws:
    """Single-response Bayesian R-squared; the D=2 case of the CoDa forms.

    Exactly one residual source must be given: ``residual_draws`` (S x N
    realized residuals) or ``sigma2_draws`` (S modeled variances).
    """
    pred = np.asarray(pred_mean_draws, dtype=float)
    if pred.ndim != 2:
        raise ShapeMismatch(f"pred_mean_draws must be S x N, got {pred.shape}")
    if (residual_draws is None) == (sigma2_draws is None):
        raise ShapeMismatch("pass exactly one of residual_draws / sigma2_draws")
    if residual_draws is not None:
        resid = np.asarray(residual_draws, dtype=float)
        if resid.shape != pred.shape:
            raise ShapeMismatch("residual draws must match prediction draws")
        return R2Draws(_univariate_residual(pred, resid), RESIDUAL_BASED, label)
    sigma2 = np.asarray(sigma2_draws, dtype=float)
    if sigma2.shape != (pred.shape[0],):
        raise ShapeMismatch("sigma2 draws must have one entry per draw")
    return R2Draws(
        bm_coda_r2(pred[:, :, None], sigma2[:, None]).values, MODEL_BASED, label
    )


def _univariate_residual(pred: np.ndarray, resid: np.ndarray) -> np.ndarray:
    var_fit = pred.var(axis=1, ddof=1)
    var_res = resid.var(axis=1, ddof=1)
    total = var_fit + var_res
    return np.divide(var_fit, total, out=np.zeros_like(total), where=total > 0)


def compare_r2(a: R2Draws, b: R2Draws, alpha: float = 0.1) -> ComparisonResult:
    """Probability that model a explains at least as much variability as b.

    Equal-length draw vectors are compared pair-by-pair in draw order
    (models fitted with the same sampler settings); otherwise all cross
    pairs are counted.  Ties count toward the probability, so comparing a
    model with itself yields 1.  A probability of exactly 1 or 0 is a
    finite-sample statement: it certifies only >= 1 - 1/n_pairs.
    """
    if a.kind != b.kind:
        raise KindMismatch(f"cannot compare {a.kind} with {b.kind}")
    if a.n_draws == 0 or b.n_draws == 0:
        raise EmptyDraws("empty R2 draw vector")
    if not 0.0 < alpha < 0.5:
        raise ShapeMismatch("alpha must lie in (0, 0.5)")
    if a.n_draws == b.n_draws:
        probability = float(np.mean(a.values >= b.values))
        n_pairs = a.n_draws
    else:
        sorted_b = np.sort(b.values)
        counts = np.searchsorted(sorted_b, a.values, side="right")
        probability = float(counts.sum() / (a.n_draws * b.n_draws))
        n_pairs = a.n_draws * b.n_draws
    if probability >= 1.0 - alpha:
        verdict = "A-substantially-better"
    elif probability <= alpha:
        verdict = "B-substantially-better"
    else:
        verdict = "similar"
    return ComparisonResult(
        probability=probability,
        alpha=alpha,
        verdict=verdict,
        label_a=a.label,
        label_b=b.label,
        n_pairs=n_pairs,
    )
