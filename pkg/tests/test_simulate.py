"""Simulation generators: frozen truths, determinism, moment checks."""

import numpy as np
import pytest

from codagam.errors import InvalidCovariance, InvalidSpec, OutOfDomain
from codagam.ilr import build_basis, ilr_sample
from codagam.simplex import total_variance
from codagam.simulate import (
    GamSimConfig,
    LinearSimConfig,
    bivariate_f1,
    bivariate_f2,
    gu_wahba,
    simulate_gam,
    simulate_linear,
    simulate_soil_like,
    sine_f,
)


class TestSmoothFunctions:
    def test_gu_wahba_boundary_zeros(self):
        assert gu_wahba(0.0) == 0.0
        assert gu_wahba(1.0) == 0.0

    def test_gu_wahba_midpoint(self):
        # 0.2 * 0.5^11 * 5^6 + 10 * 5^3 * 0.5^10, all dyadic: exact value
        assert gu_wahba(0.5) == pytest.approx(2.74658203125, abs=0.0)

    def test_sine_quarter_period(self):
        assert sine_f(0.25) == pytest.approx(1.0, rel=1e-15)

    def test_surface_center_value(self):
        expected = np.pi**0.3 * 0.4 * 1.2  # Gaussian exponent vanishes there
        assert bivariate_f2(0.5, 0.5) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.6766844539560258, abs=1e-12)

    def test_surface_two_local_maxima(self):
        grid = np.linspace(0, 1, 200)
        values = bivariate_f1(grid[:, None], grid[None, :])
        interior = values[1:-1, 1:-1]
        neighbors = np.stack(
            [
                values[ia : 199 + ia - 1, ja : 199 + ja - 1]
                for ia in (0, 1, 2)
                for ja in (0, 1, 2)
                if not (ia == 1 and ja == 1)
            ]
        )
        is_max = np.all(interior > neighbors, axis=0)
        peaks = np.argwhere(is_max)
        assert len(peaks) == 2
        coords = [(grid[i + 1], grid[j + 1]) for i, j in peaks]
        coords.sort()
        assert coords[0] == pytest.approx((0.2, 0.3), abs=0.02)
        assert coords[1] == pytest.approx((0.7, 0.8), abs=0.02)

    def test_surfaces_strictly_positive(self):
        grid = np.linspace(0, 1, 50)
        assert np.all(bivariate_f1(grid[:, None], grid[None, :]) > 0)
        assert np.all(bivariate_f2(grid[:, None], grid[None, :]) > 0)

    def test_domain_enforced(self):
        with pytest.raises(OutOfDomain):
            gu_wahba(1.1)
        with pytest.raises(OutOfDomain):
            sine_f(-0.2)
        with pytest.raises(OutOfDomain):
            bivariate_f1(0.5, 2.0)


class TestLinearDesign:
    def test_paper_defaults(self):
        config = LinearSimConfig()
        assert config.intercepts == (1.0, -0.5, -2.0)
        assert config.slopes == ((-0.5, 1.0, -0.5), (1.0, -1.0, 0.0), (1.0, -0.5, -0.5))
        assert config.sigma == (0.10, 0.05, 0.08)
        assert config.rho == (0.5, 0.2, 0.8)

    def test_schema(self):
        data, truth = simulate_linear(LinearSimConfig(n=40, seed=3))
        assert list(data.frame.columns) == [
            "y1", "y2", "y3", "y4", "x1", "x2", "x3", "x4",
        ]
        assert data.n_rows == 40
        assert truth["irrelevant_covariate"] == "x4"

    def test_bit_reproducible(self):
        a, _ = simulate_linear(LinearSimConfig(n=30, seed=9))
        b, _ = simulate_linear(LinearSimConfig(n=30, seed=9))
        assert a.frame.equals(b.frame)
        c, _ = simulate_linear(LinearSimConfig(n=30, seed=10))
        assert not a.frame.equals(c.frame)

    def test_noiseless_limit(self):
        config = LinearSimConfig(n=20, sigma=(0.0, 0.0, 0.0), rho=(0.0, 0.0, 0.0), seed=4)
        data, truth = simulate_linear(config)
        coords = ilr_sample(data.compositions(), build_basis(4))
        x = data.frame[["x1", "x2", "x3"]].to_numpy()
        mean = np.asarray(truth["intercepts"]) + x @ np.asarray(truth["slopes"]).T
        np.testing.assert_allclose(coords, mean, atol=1e-12)

    def test_large_sample_covariance(self):
        config = LinearSimConfig(n=100_000, seed=5)
        data, truth = simulate_linear(config)
        coords = ilr_sample(data.compositions(), build_basis(4))
        x = data.frame[["x1", "x2", "x3"]].to_numpy()
        mean = np.asarray(truth["intercepts"]) + x @ np.asarray(truth["slopes"]).T
        resid = coords - mean
        emp = np.cov(resid.T)
        sigma = np.asarray(truth["sigma"])
        corr = np.eye(3)
        corr[np.triu_indices(3, 1)] = truth["rho"]
        corr += np.triu(corr, 1).T
        cov = np.outer(sigma, sigma) * corr
        n = config.n
        for i in range(3):
            for j in range(3):
                se = np.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / n)
                assert abs(emp[i, j] - cov[i, j]) < 3 * se

    def test_invalid_covariance(self):
        with pytest.raises(InvalidCovariance):
            simulate_linear(LinearSimConfig(rho=(0.99, -0.99, 0.99)))


class TestGamDesign:
    def test_centering(self):
        _, truth = simulate_gam(GamSimConfig(n=60, seed=6))
        for block in ("univariate_centered", "bivariate_centered"):
            for values in truth[block]:
                assert abs(np.mean(values)) < 1e-12

    def test_schema_and_determinism(self):
        a, _ = simulate_gam(GamSimConfig(n=25, seed=7))
        b, _ = simulate_gam(GamSimConfig(n=25, seed=7))
        assert list(a.frame.columns) == ["y1", "y2", "y3", "xs1", "xs2", "xs3"]
        assert a.frame.equals(b.frame)

    def test_noiseless_limit(self):
        config = GamSimConfig(n=30, sigma1=0.0, sigma2=0.0, rho12=0.0, seed=8)
        data, truth = simulate_gam(config)
        coords = ilr_sample(data.compositions(), build_basis(3))
        np.testing.assert_allclose(coords, np.asarray(truth["mean"]), atol=1e-12)

    def test_signal_exceeds_noise_variance(self):
        wins = 0
        for seed in range(10):
            data, truth = simulate_gam(GamSimConfig(n=100, seed=seed))
            tv = total_variance(data.compositions())
            if tv > 0.05**2 + 0.03**2:
                wins += 1
        assert wins == 10  # smooth signal dominates the configured noise


class TestSoilDesign:
    def test_dataset_valid(self):
        data, truth = simulate_soil_like(80, seed=11)
        comp = data.frame[["sand", "silt", "clay"]].to_numpy()
        assert np.all(comp > 0)
        np.testing.assert_allclose(comp.sum(axis=1), 1.0, atol=1e-9)
        assert data.n_rows == 80

    def test_thirteen_lithology_levels(self):
        data, truth = simulate_soil_like(60, seed=12)
        assert sorted(data.frame["Lithology"].unique()) == list(range(1, 14))
        assert len(np.asarray(truth["lithology_effects"])) == 13

    def test_all_years_observed(self):
        data, _ = simulate_soil_like(55, seed=13)
        assert sorted(data.frame["Year"].unique()) == list(range(2010, 2019))

    def test_minimum_size(self):
        with pytest.raises(InvalidSpec):
            simulate_soil_like(20, seed=1)

    def test_reproducible(self):
        a, ta = simulate_soil_like(70, seed=14)
        b, tb = simulate_soil_like(70, seed=14)
        assert a.frame.equals(b.frame)
        assert ta == tb

    def test_ground_truth_centered(self):
        _, truth = simulate_soil_like(90, seed=15)
        for key in ("spatial_centered", "elev_centered", "slope_centered"):
            np.testing.assert_allclose(
                np.asarray(truth[key]).mean(axis=0), 0.0, atol=1e-12
            )
