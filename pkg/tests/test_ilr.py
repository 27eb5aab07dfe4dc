"""Balance basis construction and the isometric log-ratio transform."""

import numpy as np
import pytest

from codagam.errors import DimensionMismatch, DimensionTooSmall
from codagam.ilr import (
    IlrCoordinates,
    build_basis,
    ilr,
    ilr_inverse,
    ilr_inverse_sample,
    ilr_sample,
)
from codagam.simplex import (
    aitchison_dist,
    closure,
    closure_matrix,
    perturb,
    power,
    uniform,
)


def ilr_closed_form(parts: np.ndarray) -> np.ndarray:
    # Direct balance formula: sqrt(d/(d+1)) * log(gmean(y_1..y_d) / y_{d+1})
    parts = np.asarray(parts, dtype=float)
    out = np.empty(parts.size - 1)
    for d in range(1, parts.size):
        gmean = np.exp(np.mean(np.log(parts[:d])))
        out[d - 1] = np.sqrt(d / (d + 1.0)) * np.log(gmean / parts[d])
    return out


class TestBasis:
    def test_two_part_row(self):
        basis = build_basis(2)
        np.testing.assert_allclose(
            basis.contrast_matrix, [[np.sqrt(0.5), -np.sqrt(0.5)]], rtol=1e-15
        )

    def test_three_part_rows(self):
        basis = build_basis(3)
        expected = [
            [np.sqrt(1 / 2), -np.sqrt(1 / 2), 0.0],
            [np.sqrt(1 / 6), np.sqrt(1 / 6), -np.sqrt(2 / 3)],
        ]
        np.testing.assert_allclose(basis.contrast_matrix, expected, rtol=1e-15)

    @pytest.mark.parametrize("dim", range(2, 11))
    def test_orthonormal_rows(self, dim):
        mat = build_basis(dim).contrast_matrix
        np.testing.assert_allclose(mat @ mat.T, np.eye(dim - 1), atol=1e-10)

    @pytest.mark.parametrize("dim", range(2, 11))
    def test_rows_sum_to_zero(self, dim):
        mat = build_basis(dim).contrast_matrix
        np.testing.assert_allclose(mat.sum(axis=1), 0.0, atol=1e-12)

    @pytest.mark.parametrize("dim", range(2, 8))
    def test_structural_pattern(self, dim):
        mat = build_basis(dim).contrast_matrix
        for d in range(1, dim):
            row = mat[d - 1]
            np.testing.assert_allclose(row[:d], np.sqrt(1 / (d * (d + 1))), rtol=1e-14)
            assert row[d] == pytest.approx(-np.sqrt(d / (d + 1)), rel=1e-14)
            np.testing.assert_allclose(row[d + 1 :], 0.0, atol=0.0)

    def test_rejects_small_dimension(self):
        with pytest.raises(DimensionTooSmall):
            build_basis(1)


class TestForward:
    def test_uniform_maps_to_zero(self):
        for dim in (2, 3, 5):
            coords = ilr(uniform(dim), build_basis(dim))
            np.testing.assert_allclose(coords.coords, 0.0, atol=1e-14)

    def test_two_part_value(self):
        coords = ilr(closure([0.8, 0.2]), build_basis(2))
        assert coords.coords[0] == pytest.approx(np.sqrt(0.5) * np.log(4.0), rel=1e-14)

    def test_soil_convention(self):
        # coordinate 1: relative proportion of part 1 (sand) to part 2 (silt);
        # coordinate 2: balance of their geometric mean against part 3 (clay)
        sand, silt, clay = 0.55, 0.30, 0.15
        coords = ilr(closure([sand, silt, clay]), build_basis(3)).coords
        assert coords[0] == pytest.approx(np.sqrt(1 / 2) * np.log(sand / silt), rel=1e-12)
        assert coords[1] == pytest.approx(
            np.sqrt(2 / 3) * np.log(np.sqrt(sand * silt) / clay), rel=1e-12
        )

    @pytest.mark.parametrize("dim", range(2, 11))
    def test_matches_closed_form(self, dim):
        rng = np.random.default_rng(dim)
        basis = build_basis(dim)
        for _ in range(10):
            y = closure(rng.uniform(0.05, 1.0, size=dim))
            np.testing.assert_allclose(
                ilr(y, basis).coords, ilr_closed_form(y.parts), atol=1e-12
            )

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            ilr(closure([1, 2, 3]), build_basis(4))


class TestInverse:
    def test_zero_maps_to_uniform(self):
        basis = build_basis(4)
        out = ilr_inverse(np.zeros(3), basis)
        np.testing.assert_allclose(out.parts, uniform(4).parts, rtol=1e-14)

    def test_round_trip(self):
        rng = np.random.default_rng(21)
        for dim in (2, 3, 5, 8):
            basis = build_basis(dim)
            y = closure(rng.uniform(0.05, 1.0, size=dim))
            back = ilr_inverse(ilr(y, basis), basis)
            np.testing.assert_allclose(back.parts, y.parts, atol=1e-10)

    def test_known_inverse(self):
        basis = build_basis(2)
        out = ilr_inverse(np.array([np.sqrt(0.5) * np.log(4.0)]), basis)
        np.testing.assert_allclose(out.parts, [0.8, 0.2], atol=1e-12)

    def test_coordinate_round_trip(self):
        rng = np.random.default_rng(22)
        basis = build_basis(5)
        v = rng.normal(size=4)
        back = ilr(ilr_inverse(v, basis), basis)
        np.testing.assert_allclose(back.coords, v, atol=1e-10)

    def test_kappa_passthrough(self):
        basis = build_basis(3)
        out = ilr_inverse(np.array([0.3, -0.2]), basis, kappa=100.0)
        assert out.kappa == 100.0
        assert out.parts.sum() == pytest.approx(100.0, rel=1e-12)


class TestSampleOps:
    def test_single_row_matches_scalar(self):
        basis = build_basis(3)
        sample = closure_matrix([[0.2, 0.3, 0.5]])
        row = ilr_sample(sample, basis)[0]
        scalar = ilr(sample.row(0), basis).coords
        np.testing.assert_allclose(row, scalar, atol=1e-14)

    def test_round_trip_matrix(self):
        rng = np.random.default_rng(23)
        sample = closure_matrix(rng.uniform(0.05, 1.0, size=(50, 4)))
        basis = build_basis(4)
        back = ilr_inverse_sample(ilr_sample(sample, basis), basis)
        assert np.max(np.abs(back.data - sample.data)) < 1e-10

    def test_isometry_pairwise(self):
        rng = np.random.default_rng(24)
        sample = closure_matrix(rng.uniform(0.05, 1.0, size=(12, 5)))
        basis = build_basis(5)
        coords = ilr_sample(sample, basis)
        for i in range(12):
            for j in range(i):
                euclid = np.linalg.norm(coords[i] - coords[j])
                da = aitchison_dist(sample.row(i), sample.row(j))
                assert abs(euclid - da) < 1e-10


class TestLinearity:
    def test_perturbation_is_addition(self):
        rng = np.random.default_rng(25)
        basis = build_basis(4)
        x = closure(rng.uniform(0.05, 1.0, size=4))
        y = closure(rng.uniform(0.05, 1.0, size=4))
        lhs = ilr(perturb(x, y), basis).coords
        rhs = ilr(x, basis).coords + ilr(y, basis).coords
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_powering_is_scaling(self):
        rng = np.random.default_rng(26)
        basis = build_basis(3)
        x = closure(rng.uniform(0.05, 1.0, size=3))
        alpha = -1.7
        lhs = ilr(power(alpha, x), basis).coords
        np.testing.assert_allclose(lhs, alpha * ilr(x, basis).coords, atol=1e-10)

    def test_coordinate_container_validates(self):
        with pytest.raises(DimensionMismatch):
            IlrCoordinates(np.zeros(3), basis_dimension=3)
