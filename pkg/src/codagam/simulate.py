"""Seeded generators for the simulation designs and a soil-like dataset.

All generators split a counter-based Philox stream into independent
substreams for covariates and noise, so every dataset is bit-reproducible
from its seed and the two sources never interact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InvalidCovariance, InvalidSpec, OutOfDomain
from .ilr import build_basis, ilr_inverse_sample
from .model import Dataset

# True parameter values of the linear simulation design: three uniform
# covariates drive three ilr coordinates of a four-part composition.
LINEAR_INTERCEPTS = (1.0, -0.5, -2.0)
LINEAR_SLOPES = (
    (-0.5, 1.0, -0.5),
    (1.0, -1.0, 0.0),
    (1.0, -0.5, -0.5),
)
LINEAR_SIGMA = (0.10, 0.05, 0.08)
LINEAR_RHO = (0.5, 0.2, 0.8)  # rho_12, rho_13, rho_23


def _rngs(seed: int, n_streams: int = 2) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n_streams)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def _covariance(sigma: np.ndarray, rho_upper: np.ndarray) -> np.ndarray:
    q = sigma.size
    corr = np.eye(q)
    corr[np.triu_indices(q, k=1)] = rho_upper
    corr = corr + np.triu(corr, k=1).T
    cov = np.outer(sigma, sigma) * corr
    if np.any(sigma < 0):
        raise InvalidCovariance("standard deviations must be nonnegative")
    if np.any(sigma > 0):
        active = sigma > 0
        sub = cov[np.ix_(active, active)]
        if np.linalg.eigvalsh(sub).min() <= 0:
            raise InvalidCovariance("implied covariance is not positive definite")
    return cov


def _mvn_noise(rng, cov: np.ndarray, n: int) -> np.ndarray:
    if np.all(np.diag(cov) == 0):
        return np.zeros((n, cov.shape[0]))
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=n,
                                   method="cholesky")


@dataclass(frozen=True)
class LinearSimConfig:
    n: int = 100
    intercepts: tuple = LINEAR_INTERCEPTS
    slopes: tuple = LINEAR_SLOPES
    sigma: tuple = LINEAR_SIGMA
    rho: tuple = LINEAR_RHO
    seed: int = 0

    def __post_init__(self):
        q = len(self.intercepts)
        if len(self.slopes) != q or len(self.sigma) != q:
            raise InvalidSpec("intercepts, slopes and sigma must share length")
        if len(self.rho) != q * (q - 1) // 2:
            raise InvalidSpec("rho must list the upper-triangle correlations")


@dataclass(frozen=True)
class GamSimConfig:
    n: int = 100
    sigma1: float = 0.05
    sigma2: float = 0.03
    rho12: float = 0.5
    seed: int = 0


def simulate_linear(config: LinearSimConfig) -> tuple[Dataset, dict]:
    """Linear design: q+1-part compositions from uniform covariates.

    Generates one extra covariate (x4 by default) that does not enter the
    data-generating process, for irrelevant-covariate comparisons.
    """
    cov_rng, noise_rng = _rngs(config.seed)
    q = len(config.intercepts)
    n_slopes = len(config.slopes[0])
    sigma = np.asarray(config.sigma, dtype=float)
    cov = _covariance(sigma, np.asarray(config.rho, dtype=float))
    x = cov_rng.uniform(0.0, 1.0, size=(config.n, n_slopes + 1))
    slopes = np.asarray(config.slopes, dtype=float)
    mean = np.asarray(config.intercepts) + x[:, :n_slopes] @ slopes.T
    coords = mean + _mvn_noise(noise_rng, cov, config.n)
    comp = ilr_inverse_sample(coords, build_basis(q + 1))
    frame = pd.DataFrame(comp.data, columns=[f"y{i + 1}" for i in range(q + 1)])
    for k in range(n_slopes + 1):
        frame[f"x{k + 1}"] = x[:, k]
    truth = {
        "design": "linear",
        "seed": config.seed,
        "n": config.n,
        "intercepts": list(config.intercepts),
        "slopes": [list(row) for row in config.slopes],
        "sigma": list(config.sigma),
        "rho": list(config.rho),
        "irrelevant_covariate": f"x{n_slopes + 1}",
    }
    return Dataset(frame, [f"y{i + 1}" for i in range(q + 1)]), truth


# --- smooth test functions ----------------------------------------------------


def _check_unit(x, name: str):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise OutOfDomain(f"{name} is defined on [0, 1]")
    return arr


def gu_wahba(x):
    """Bump-plus-spike benchmark curve on [0, 1]."""
    x = _check_unit(x, "gu_wahba")
    return 0.2 * x**11 * (10.0 * (1.0 - x)) ** 6 + 10.0 * (10.0 * x) ** 3 * (1.0 - x) ** 10


def sine_f(x):
    """One full sine period on [0, 1]."""
    x = _check_unit(x, "sine_f")
    return np.sin(2.0 * np.pi * x)


_SURFACE_SCALE = np.pi**0.3 * 0.4


def bivariate_f1(x2, x3):
    """Two-bump Gaussian surface on the unit square."""
    x2 = _check_unit(x2, "bivariate_f1")
    x3 = _check_unit(x3, "bivariate_f1")
    return _SURFACE_SCALE * (
        1.2 * np.exp(-((x2 - 0.2) ** 2) / 0.3**2 - ((x3 - 0.3) ** 2) / 0.4**2)
        + 0.8 * np.exp(-((x2 - 0.7) ** 2) / 0.3**2 - ((x3 - 0.8) ** 2) / 0.4**2)
    )


def bivariate_f2(x2, x3):
    """Single-bump Gaussian surface centered in the unit square."""
    x2 = _check_unit(x2, "bivariate_f2")
    x3 = _check_unit(x3, "bivariate_f2")
    return _SURFACE_SCALE * 1.2 * np.exp(
        -((x2 - 0.5) ** 2) / 0.3**2 - ((x3 - 0.5) ** 2) / 0.4**2
    )


def simulate_gam(config: GamSimConfig) -> tuple[Dataset, dict]:
    """Smooth design: three-part compositions driven by a univariate curve
    plus a bivariate surface per coordinate.

    Every smooth component is centered by its empirical mean over the
    realized design points, so recorded ground truth aligns with fitted
    (sum-to-zero) smooths.
    """
    cov_rng, noise_rng = _rngs(config.seed)
    xs = cov_rng.uniform(0.0, 1.0, size=(config.n, 3))
    f11 = gu_wahba(xs[:, 0])
    f12 = sine_f(xs[:, 0])
    f21 = bivariate_f1(xs[:, 1], xs[:, 2])
    f22 = bivariate_f2(xs[:, 1], xs[:, 2])
    centered = [f - f.mean() for f in (f11, f12, f21, f22)]
    mean = np.column_stack([centered[0] + centered[2], centered[1] + centered[3]])
    sigma = np.array([config.sigma1, config.sigma2])
    cov = _covariance(sigma, np.array([config.rho12]))
    coords = mean + _mvn_noise(noise_rng, cov, config.n)
    comp = ilr_inverse_sample(coords, build_basis(3))
    frame = pd.DataFrame(comp.data, columns=["y1", "y2", "y3"])
    for k in range(3):
        frame[f"xs{k + 1}"] = xs[:, k]
    truth = {
        "design": "gam",
        "seed": config.seed,
        "n": config.n,
        "sigma": [config.sigma1, config.sigma2],
        "rho": [config.rho12],
        "univariate_centered": [centered[0].tolist(), centered[1].tolist()],
        "bivariate_centered": [centered[2].tolist(), centered[3].tolist()],
        "mean": mean.tolist(),
    }
    return Dataset(frame, ["y1", "y2", "y3"]), truth


# --- soil-like generator -------------------------------------------------------

_SOIL_SIGMA = (0.22, 0.18)
_SOIL_RHO = 0.35
_N_LITHOLOGY = 13
_YEARS = tuple(range(2010, 2019))


def _soil_spatial(lon, lat):
    field1 = 0.9 * np.exp(-((lon - 0.25) ** 2 + (lat - 0.7) ** 2) / 0.08) - 0.7 * np.exp(
        -((lon - 0.75) ** 2 + (lat - 0.25) ** 2) / 0.12
    )
    field2 = 0.8 * np.sin(np.pi * lon) * np.cos(np.pi * lat)
    return field1, field2


def _soil_elev_effect(elev):
    z = elev / 800.0
    return 0.35 * np.sin(np.pi * z), -0.3 * (z - 0.5) ** 2 * 4.0 + 0.3


def _soil_slope_effect(slope):
    z = slope / 30.0
    return -0.4 * z**2, 0.3 * np.cos(np.pi * z)


def simulate_soil_like(n: int, seed: int = 0) -> tuple[Dataset, dict]:
    """Synthetic stand-in for a soil texture survey.

    Three-part compositions (sand, silt, clay) over a unit-square region
    with a 13-level lithology factor, survey years as a grouping factor,
    elevation and slope covariates, and known smooth spatial fields, so
    the full spatial pipeline can be exercised and checked against truth.
    """
    if n < 50:
        raise InvalidSpec("soil-like datasets need n >= 50")
    cov_rng, noise_rng, effect_rng = _rngs(seed, 3)
    lon = cov_rng.uniform(0.0, 1.0, size=n)
    lat = cov_rng.uniform(0.0, 1.0, size=n)
    elev = cov_rng.uniform(0.0, 800.0, size=n)
    slope = cov_rng.uniform(0.0, 30.0, size=n)
    lith = cov_rng.integers(1, _N_LITHOLOGY + 1, size=n)
    lith[: _N_LITHOLOGY] = np.arange(1, _N_LITHOLOGY + 1)  # all levels observed
    year = cov_rng.choice(_YEARS, size=n)
    year[: len(_YEARS)] = _YEARS

    lith_effects = effect_rng.normal(0.0, 0.3, size=(_N_LITHOLOGY, 2))
    lith_effects[0] = 0.0  # level 1 is the reference
    year_effects = effect_rng.normal(0.0, 0.15, size=(len(_YEARS), 2))

    spatial = np.column_stack(_soil_spatial(lon, lat))
    spatial -= spatial.mean(axis=0)
    elev_fx = np.column_stack(_soil_elev_effect(elev))
    elev_fx -= elev_fx.mean(axis=0)
    slope_fx = np.column_stack(_soil_slope_effect(slope))
    slope_fx -= slope_fx.mean(axis=0)

    intercepts = np.array([0.094, 0.329])  # roughly 40/35/25 sand/silt/clay
    mean = (
        intercepts
        + lith_effects[lith - 1]
        + year_effects[np.searchsorted(_YEARS, year)]
        + spatial
        + elev_fx
        + slope_fx
    )
    cov = _covariance(np.asarray(_SOIL_SIGMA), np.array([_SOIL_RHO]))
    coords = mean + _mvn_noise(noise_rng, cov, n)
    comp = ilr_inverse_sample(coords, build_basis(3))
    frame = pd.DataFrame(comp.data, columns=["sand", "silt", "clay"])
    frame["Lon"] = lon
    frame["Lat"] = lat
    frame["Elev"] = elev
    frame["Slope"] = slope
    frame["Lithology"] = lith
    frame["Year"] = year
    truth = {
        "design": "soil",
        "seed": seed,
        "n": n,
        "intercepts": intercepts.tolist(),
        "sigma": list(_SOIL_SIGMA),
        "rho": [_SOIL_RHO],
        "lithology_effects": lith_effects.tolist(),
        "year_effects": year_effects.tolist(),
        "spatial_centered": spatial.tolist(),
        "elev_centered": elev_fx.tolist(),
        "slope_centered": slope_fx.tolist(),
    }
    return Dataset(frame, ["sand", "silt", "clay"]), truth
