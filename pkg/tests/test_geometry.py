"""Tests for manifold bases and the data/noise samplers."""

import numpy as np
import pytest

from kdiff_lab import (
    ColoredCovariance,
    DimError,
    derive_rng,
    random_orthonormal_basis,
    sample_colored,
    sample_data,
    sample_noise,
)


class TestBasis:
    def test_columns_orthonormal(self):
        basis = random_orthonormal_basis(64, 4, np.random.default_rng(42))
        gram = basis.matrix.T @ basis.matrix
        assert np.max(np.abs(gram - np.eye(4))) < 1e-10

    def test_single_column(self):
        basis = random_orthonormal_basis(3, 1, np.random.default_rng(0))
        assert basis.matrix.T @ basis.matrix == pytest.approx(1.0, abs=1e-12)

    def test_square_case_is_orthogonal(self):
        basis = random_orthonormal_basis(5, 5, np.random.default_rng(1))
        np.testing.assert_allclose(basis.projector(), np.eye(5), atol=1e-10)

    def test_projector_idempotent_and_symmetric(self):
        basis = random_orthonormal_basis(12, 3, np.random.default_rng(2))
        proj = basis.projector()
        np.testing.assert_allclose(proj @ proj, proj, atol=1e-10)
        np.testing.assert_allclose(proj, proj.T, atol=1e-14)

    def test_deterministic_given_seed(self):
        a = random_orthonormal_basis(16, 4, np.random.default_rng(7)).matrix
        b = random_orthonormal_basis(16, 4, np.random.default_rng(7)).matrix
        np.testing.assert_array_equal(a, b)

    def test_dim_error(self):
        with pytest.raises(DimError):
            random_orthonormal_basis(3, 4, np.random.default_rng(0))
        with pytest.raises(DimError):
            random_orthonormal_basis(3, 0, np.random.default_rng(0))


class TestSampleData:
    def test_rows_lie_in_span(self):
        basis = random_orthonormal_basis(10, 3, np.random.default_rng(3))
        x = sample_data(basis, 200, np.random.default_rng(4))
        off = x - x @ basis.projector()
        assert np.max(np.abs(off)) < 1e-10

    def test_latents_are_whitened(self):
        basis = random_orthonormal_basis(8, 2, np.random.default_rng(5))
        x = sample_data(basis, 1_000_000, np.random.default_rng(6))
        latents = x @ basis.matrix
        second = latents.T @ latents / len(latents)
        assert np.max(np.abs(second - np.eye(2))) < 5e-3

    def test_one_dimensional_manifold_is_a_line(self):
        basis = random_orthonormal_basis(6, 1, np.random.default_rng(8))
        x = sample_data(basis, 50, np.random.default_rng(9))
        directions = x / np.linalg.norm(x, axis=1, keepdims=True)
        column = basis.matrix[:, 0]
        agreement = np.abs(directions @ column)
        np.testing.assert_allclose(agreement, 1.0, atol=1e-12)

    def test_independent_streams_uncorrelated(self):
        basis = random_orthonormal_basis(6, 2, np.random.default_rng(10))
        x = sample_data(basis, 200_000, derive_rng(0, "test", "data"))
        n = sample_noise(6, 200_000, derive_rng(0, "test", "noise"))
        cross = x.T @ n / len(x)
        # entries are ~Normal(0, 1/sqrt(N)); generous multiple, fixed seed
        assert np.max(np.abs(cross)) < 5.0 / np.sqrt(len(x))


class TestSampleNoise:
    def test_moments(self):
        n = sample_noise(4, 1_000_000, np.random.default_rng(11))
        assert np.max(np.abs(n.mean(axis=0))) < 3.5 / np.sqrt(len(n))
        cov = n.T @ n / len(n)
        assert np.max(np.abs(cov - np.eye(4))) < 5e-3

    def test_deterministic_given_seed(self):
        a = sample_noise(5, 10, np.random.default_rng(12))
        b = sample_noise(5, 10, np.random.default_rng(12))
        np.testing.assert_array_equal(a, b)


class TestColoredCovariance:
    def test_zero_covariance_gives_zero_samples(self):
        cov = ColoredCovariance.from_spectrum(np.zeros(4))
        x = sample_colored(cov, 100, np.random.default_rng(13))
        np.testing.assert_array_equal(x, np.zeros((100, 4)))

    def test_identity_covariance_trace(self):
        cov = ColoredCovariance.from_spectrum(np.ones(6))
        x = sample_colored(cov, 500_000, np.random.default_rng(14))
        trace = float(np.sum(x * x) / len(x))
        # tr estimate has std sqrt(2 D / N)
        assert abs(trace - 6.0) < 3.0 * np.sqrt(2.0 * 6.0 / len(x))

    def test_trace_equals_eigenvalue_sum(self):
        rng = np.random.default_rng(15)
        mat = rng.standard_normal((5, 5))
        cov = ColoredCovariance.from_covariance(mat @ mat.T)
        assert np.trace(cov.covariance()) == pytest.approx(cov.spectrum.trace, abs=1e-9)

    def test_projector_covariance_matches_manifold_sampler(self):
        basis = random_orthonormal_basis(6, 2, np.random.default_rng(16))
        cov = ColoredCovariance.from_covariance(basis.projector())
        a = sample_colored(cov, 100_000, np.random.default_rng(17))
        b = sample_data(basis, 100_000, np.random.default_rng(18))
        cov_a = a.T @ a / len(a)
        cov_b = b.T @ b / len(b)
        assert np.max(np.abs(cov_a - cov_b)) < 6.0 / np.sqrt(len(a))

    def test_from_covariance_validation(self):
        with pytest.raises(ValueError):
            ColoredCovariance.from_covariance(np.array([[1.0, 0.2], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            ColoredCovariance.from_covariance(np.array([[1.0, 0.0], [0.0, -0.5]]))
        with pytest.raises(DimError):
            ColoredCovariance.from_covariance(np.ones((2, 3)))

    def test_factor_reproduces_covariance(self):
        rng = np.random.default_rng(19)
        mat = rng.standard_normal((4, 4))
        sigma = mat @ mat.T
        cov = ColoredCovariance.from_covariance(sigma)
        np.testing.assert_allclose(cov.covariance(), sigma, atol=1e-10)
