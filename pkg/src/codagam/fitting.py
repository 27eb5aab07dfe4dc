"""High-level fit/predict orchestration shared by the CLI and tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import InsufficientDraws
from .evaluation import R2Draws, bm_coda_r2, br_coda_r2, waic
from .hmc import PosteriorDraws, SamplerConfig, diagnostics, sample
from .ilr import build_basis
from .model import Dataset, DesignBundle, ModelSpec, build_design, make_target
from .usda import classify_usda

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class FitResult:
    """Everything produced by one model fit."""

    label: str
    bundle: DesignBundle
    draws: PosteriorDraws
    pointwise_loglik: np.ndarray  # S x N
    pred_mean_draws: np.ndarray  # S x N x q
    sigma2_draws: np.ndarray  # S x q
    br_r2: R2Draws
    bm_r2: R2Draws
    waic: float
    lppd: float
    p_waic: float

    @property
    def n_draws(self) -> int:
        return self.draws.n_draws

    def summary(self) -> pd.DataFrame:
        """Posterior mean, sd and central quantiles per named parameter."""
        draws = self.draws.draws
        quantiles = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
        return pd.DataFrame(
            {
                "parameter": list(self.draws.names),
                "mean": draws.mean(axis=0),
                "sd": draws.std(axis=0, ddof=1),
                "q2.5": quantiles[0],
                "q50": quantiles[1],
                "q97.5": quantiles[2],
            }
        )

    def convergence(self) -> pd.DataFrame | None:
        try:
            return diagnostics(self.draws)
        except InsufficientDraws:
            return None

    def fixed_effect_report(self) -> pd.DataFrame:
        """Fixed effects with multiplicative interpretation columns.

        ``exp_mean`` exponentiates the posterior-mean ilr coefficient
        directly; ``exp_mean_descaled`` divides by the balance
        normalization sqrt(d/(d+1)) first, turning the coefficient into a
        plain log-ratio change.  Both readings are reported because the
        coefficient scale depends on that convention.
        """
        summary = self.summary()
        rows = []
        q = self.bundle.n_coords
        for d in range(q):
            scaling = math.sqrt((d + 1) / (d + 2))
            for name in self.bundle.fixed_names:
                if name.startswith(("s(", "te(")):
                    continue  # smooth null-space columns are not effects
                full = f"b[{d + 1}].{name}"
                row = summary[summary["parameter"] == full].iloc[0]
                rows.append(
                    {
                        "coordinate": d + 1,
                        "term": name,
                        "mean": row["mean"],
                        "q2.5": row["q2.5"],
                        "q97.5": row["q97.5"],
                        "exp_mean": math.exp(row["mean"]),
                        "exp_mean_descaled": math.exp(row["mean"] / scaling),
                    }
                )
        return pd.DataFrame(rows)

    def term_effect_draws(self, label: str, design: np.ndarray | None = None) -> np.ndarray:
        """Per-draw contribution of one term: (S, N, q)."""
        cols = self.bundle.term_columns[label]
        idx = np.array(
            list(cols["fixed"]) + [self.bundle.n_fixed + i for i in cols["random"]],
            dtype=int,
        )
        x = self.bundle.design if design is None else design
        coef = _coefficient_draws(self.bundle, self.draws.unconstrained)
        return np.einsum("np,spq->snq", x[:, idx], coef[:, idx, :])


def _coefficient_draws(bundle: DesignBundle, unconstrained: np.ndarray) -> np.ndarray:
    """Actual coefficient matrices for every draw: (S, P, q)."""
    lay = bundle.layout
    n_draws = unconstrained.shape[0]
    q = lay.n_coords
    coef = np.empty((n_draws, lay.n_coef, q))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for d in range(q):
            betas = unconstrained[:, lay.beta_slice(d)]
            raws = unconstrained[:, lay.raw_slice(d)]
            coef[:, : lay.n_fixed, d] = betas
            if lay.n_random:
                scales = np.exp(unconstrained[:, lay.scale_slice(d)])
                prec = (scales**-2) @ bundle.load_matrix
                coef[:, lay.n_fixed :, d] = prec**-0.5 * raws
    return coef


def _mean_draws(bundle: DesignBundle, unconstrained: np.ndarray,
                design: np.ndarray | None = None) -> np.ndarray:
    coef = _coefficient_draws(bundle, unconstrained)
    x = bundle.design if design is None else design
    return np.einsum("np,spq->snq", x, coef)


def _covariance_draws(bundle: DesignBundle, draws: PosteriorDraws) -> np.ndarray:
    """Residual covariance matrices per draw: (S, q, q)."""
    lay = bundle.layout
    q = lay.n_coords
    sigma = draws.draws[:, lay.sigma_slice]
    corr = np.tile(np.eye(q), (draws.n_draws, 1, 1))
    if lay.n_corr:
        rho = draws.draws[:, lay.corr_slice]
        iu = np.triu_indices(q, k=1)
        corr[:, iu[0], iu[1]] = rho
        corr[:, iu[1], iu[0]] = rho
    return sigma[:, :, None] * corr * sigma[:, None, :]


def _pointwise_loglik_draws(
    bundle: DesignBundle, mean_draws: np.ndarray, cov_draws: np.ndarray,
    ilr_data: np.ndarray,
) -> np.ndarray:
    q = ilr_data.shape[1]
    resid = ilr_data[None, :, :] - mean_draws  # S x N x q
    chol = np.linalg.cholesky(cov_draws)  # S x q x q
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    white = np.linalg.solve(chol, resid.transpose(0, 2, 1))  # S x q x N
    quad = np.sum(white**2, axis=1)  # S x N
    return -0.5 * q * _LOG_2PI - 0.5 * logdet[:, None] - 0.5 * quad


def fit(
    data: Dataset,
    spec: ModelSpec,
    config: SamplerConfig,
    label: str = "model",
) -> FitResult:
    """Build the design, run the sampler, and evaluate the fit."""
    bundle = build_design(data, spec)
    target = make_target(bundle)
    draws = sample(
        target,
        bundle.layout.dim,
        config,
        constrain=bundle.constrain,
        names=bundle.layout.names,
        layout=bundle.layout,
    )
    mean_draws = _mean_draws(bundle, draws.unconstrained)
    cov_draws = _covariance_draws(bundle, draws)
    sigma2 = draws.draws[:, bundle.layout.sigma_slice] ** 2
    pointwise = _pointwise_loglik_draws(bundle, mean_draws, cov_draws, bundle.ilr_data)
    waic_value, lppd, p_waic = waic(pointwise)
    br = br_coda_r2(mean_draws, bundle.ilr_data, label=label)
    bm = bm_coda_r2(mean_draws, sigma2, label=label)
    return FitResult(
        label=label,
        bundle=bundle,
        draws=draws,
        pointwise_loglik=pointwise,
        pred_mean_draws=mean_draws,
        sigma2_draws=sigma2,
        br_r2=br,
        bm_r2=bm,
        waic=waic_value,
        lppd=lppd,
        p_waic=p_waic,
    )


def predict(
    bundle: DesignBundle,
    draws: PosteriorDraws,
    grid: pd.DataFrame,
    seed: int = 0,
    max_draws: int = 1000,
    include_noise: bool = True,
    kappa: float = 1.0,
) -> pd.DataFrame:
    """Posterior predictive summaries on a covariate grid.

    Predictive draws are formed in ilr space (linear predictor plus
    residual Gaussian noise per draw), mapped back to the simplex, and
    summarized per grid row.  Rows keep the input order; covariates
    outside the training ranges are flagged, not refused.
    """
    design, flags = bundle.design_for(grid, extrapolate=True)
    n_grid = design.shape[0]
    q = bundle.n_coords
    step = max(1, draws.n_draws // max_draws)
    idx = np.arange(0, draws.n_draws, step)
    unconstrained = draws.unconstrained[idx]
    sub = PosteriorDraws(
        draws=draws.draws[idx],
        names=draws.names,
        logp=draws.logp[idx],
        divergent=draws.divergent[idx],
        chain=draws.chain[idx],
        unconstrained=unconstrained,
        layout=draws.layout,
    )
    mean_draws = _mean_draws(bundle, unconstrained, design)  # s x M x q
    coords = mean_draws
    if include_noise:
        cov_draws = _covariance_draws(bundle, sub)
        chol = np.linalg.cholesky(cov_draws)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        noise = rng.standard_normal(size=(idx.size, n_grid, q))
        coords = mean_draws + np.einsum("sqr,snr->snq", chol, noise)
    # back to the simplex
    contrast = build_basis(bundle.n_coords + 1).contrast_matrix
    flat = coords.reshape(-1, q)
    parts = np.exp(flat @ contrast)
    parts = kappa * parts / parts.sum(axis=1, keepdims=True)
    parts = parts.reshape(idx.size, n_grid, q + 1)

    out = {}
    labels = bundle.composition_cols or [f"part{i + 1}" for i in range(q + 1)]
    mean_parts = parts.mean(axis=0)
    sd_parts = parts.std(axis=0, ddof=1)
    for i, name in enumerate(labels):
        out[f"{name}_mean"] = mean_parts[:, i]
        out[f"{name}_sd"] = sd_parts[:, i]
    for d in range(q):
        out[f"ilr{d + 1}_mean"] = coords[:, :, d].mean(axis=0)
        out[f"ilr{d + 1}_sd"] = coords[:, :, d].std(axis=0, ddof=1)
    result = pd.DataFrame(out)
    if bundle.spec.dimension == 3:
        share = 100.0 * mean_parts / mean_parts.sum(axis=1, keepdims=True)
        result["usda_class"] = [
            classify_usda(sa, si, cl) for sa, si, cl in share
        ]
    result["extrapolated"] = flags
    return result
