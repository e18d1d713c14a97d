import numpy as np
import pytest

from eqcon import (
    GaussianParams,
    condition,
    marginal_pdf,
    new_constraint,
    sample_gaussian,
    unconstrained_pdf,
)
from eqcon.errors import (
    DegenerateMarginal,
    DimensionMismatch,
    IllConditioned,
    ValidationError,
)
from oracles import quadrature_conditional_moments


def _random_spd(rng, n):
    q = rng.standard_normal((n, n))
    return q @ q.T + 0.3 * np.eye(n)


class TestGaussianParams:
    def test_diagonal_requires_positive_variances(self):
        with pytest.raises(ValidationError):
            GaussianParams.diagonal([0.0, 0.0], [1.0, 0.0])

    def test_full_requires_symmetry(self):
        with pytest.raises(ValidationError):
            GaussianParams.full([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])

    def test_full_requires_positive_definite(self):
        with pytest.raises(ValidationError):
            GaussianParams.full([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            GaussianParams.diagonal([0.0, 0.0], [1.0])


class TestCondition:
    def test_symmetric_sum_to_zero(self):
        params = GaussianParams.diagonal([0.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        law = condition(params, cs)
        np.testing.assert_allclose(law.cond_mean, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(law.marg_vars, [0.5, 0.5], atol=1e-15)

    def test_shifted_mean_matches_quadrature(self):
        params = GaussianParams.diagonal([1.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        law = condition(params, cs)
        np.testing.assert_allclose(law.cond_mean, [0.5, -0.5], atol=1e-12)
        oracle_mean, oracle_var = quadrature_conditional_moments(
            params.mean, params.covariance(), cs.matrix_a, cs.vector_k
        )
        np.testing.assert_allclose(law.cond_mean, oracle_mean, atol=1e-9)
        np.testing.assert_allclose(law.marg_vars, oracle_var, atol=1e-9)

    def test_feasible_mean_keeps_mean_and_shrinks_variances(self):
        params = GaussianParams.diagonal([1.0, 2.0, 3.0], [1.0, 4.0, 9.0])
        cs = new_constraint([[1.0, 1.0, 1.0]], [6.0])
        law = condition(params, cs)
        np.testing.assert_allclose(law.cond_mean, [1.0, 2.0, 3.0], atol=1e-12)
        expected_vars = np.array([1 - 1 / 14, 4 - 16 / 14, 9 - 81 / 14])
        np.testing.assert_allclose(law.marg_vars, expected_vars, atol=1e-12)

    def test_sample_moments_cross_check(self):
        params = GaussianParams.diagonal([1.0, 2.0, 3.0], [1.0, 4.0, 9.0])
        cs = new_constraint([[1.0, 1.0, 1.0]], [6.0])
        law = condition(params, cs)
        draws = sample_gaussian(law, np.random.default_rng(11), 1_000_000)
        se_mean = np.sqrt(law.marg_vars / 1e6)
        assert np.all(np.abs(draws.mean(axis=0) - law.cond_mean) <= 3 * se_mean)
        sample_var = draws.var(axis=0)
        se_var = law.marg_vars * np.sqrt(2 / 1e6)
        assert np.all(np.abs(sample_var - law.marg_vars) <= 3 * se_var)

    def test_conditioned_law_lies_on_constraint(self):
        rng = np.random.default_rng(5)
        params = GaussianParams.full(rng.standard_normal(4), _random_spd(rng, 4))
        cs = new_constraint(rng.standard_normal((2, 4)), rng.standard_normal(2))
        law = condition(params, cs)
        np.testing.assert_allclose(
            cs.matrix_a @ law.cond_mean, cs.vector_k, atol=1e-9
        )
        np.testing.assert_allclose(cs.matrix_a @ law.cond_cov, 0.0, atol=1e-9)

    def test_mean_jacobian_identity_on_feasible_mean(self):
        # re-conditioning a law whose mean is already feasible is a no-op
        rng = np.random.default_rng(6)
        params = GaussianParams.diagonal(rng.standard_normal(5), rng.uniform(0.5, 2.0, 5))
        cs = new_constraint(rng.standard_normal((2, 5)), rng.standard_normal(2))
        law = condition(params, cs)
        again = condition(
            GaussianParams.diagonal(law.cond_mean, params.cov_diag), cs
        )
        np.testing.assert_allclose(again.cond_mean, law.cond_mean, atol=1e-12)

    def test_leading_block_reduction_matches_full_form(self):
        # dropping the trailing constrained coordinates reproduces the
        # reduced-dimension law computed directly from the block formulas
        rng = np.random.default_rng(7)
        n, a = 5, 2
        mean = rng.standard_normal(n)
        cov = _random_spd(rng, n)
        a_mat = rng.standard_normal((a, n))
        assert abs(np.linalg.det(a_mat[:, n - a :])) > 1e-6
        k_vec = rng.standard_normal(a)
        params = GaussianParams.full(mean, cov)
        cs = new_constraint(a_mat, k_vec)
        law = condition(params, cs)
        sel = np.eye(n)[: n - a]
        gram_inv = np.linalg.inv(a_mat @ cov @ a_mat.T)
        reduced_mean = sel @ mean + sel @ cov @ a_mat.T @ gram_inv @ (
            k_vec - a_mat @ mean
        )
        reduced_cov = (
            sel @ cov @ sel.T
            - sel @ cov @ a_mat.T @ gram_inv @ a_mat @ cov @ sel.T
        )
        np.testing.assert_allclose(law.cond_mean[: n - a], reduced_mean, atol=1e-10)
        np.testing.assert_allclose(
            law.cond_cov[: n - a, : n - a], reduced_cov, atol=1e-10
        )

    def test_eigenvalue_split_counts(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            a = int(rng.integers(1, n))
            params = GaussianParams.full(rng.standard_normal(n), _random_spd(rng, n))
            cs = new_constraint(rng.standard_normal((a, n)), rng.standard_normal(a))
            law = condition(params, cs)
            eigvals = np.linalg.eigvalsh(law.cond_cov)
            clamp = 1e-12 * max(eigvals[-1], 0.0)
            assert int(np.sum(eigvals <= clamp)) == a
            assert int(np.sum(eigvals > clamp)) == n - a

    def test_quadrature_oracle_low_dimensions(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n = int(rng.integers(2, 4))
            if rng.random() < 0.5:
                params = GaussianParams.diagonal(
                    rng.standard_normal(n), rng.uniform(0.2, 3.0, n)
                )
            else:
                params = GaussianParams.full(rng.standard_normal(n), _random_spd(rng, n))
            cs = new_constraint(rng.standard_normal((1, n)), rng.standard_normal(1))
            law = condition(params, cs)
            oracle_mean, oracle_var = quadrature_conditional_moments(
                params.mean, params.covariance(), cs.matrix_a, cs.vector_k
            )
            assert np.max(
                np.abs(law.cond_mean - oracle_mean) / np.maximum(np.abs(oracle_mean), 1)
            ) <= 1e-6
            assert np.max(
                np.abs(law.marg_vars - oracle_var) / np.maximum(np.abs(oracle_var), 1)
            ) <= 1e-6

    def test_ill_conditioned_interaction_raises(self):
        params = GaussianParams.diagonal([0.0, 0.0], [1.0, 1e-14])
        cs = new_constraint([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        with pytest.raises(IllConditioned):
            condition(params, cs)

    def test_dimension_mismatch(self):
        params = GaussianParams.diagonal([0.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0, 1.0]], [0.0])
        with pytest.raises(DimensionMismatch):
            condition(params, cs)


class TestSample:
    def test_constraint_exactness_across_seeds(self):
        params = GaussianParams.diagonal([0.3, -0.7], [1.0, 2.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        law = condition(params, cs)
        for seed in range(5):
            draws = sample_gaussian(law, np.random.default_rng(seed), 1000)
            assert np.max(np.abs(draws.sum(axis=1))) <= 1e-12

    def test_fully_determined_coordinate(self):
        params = GaussianParams.diagonal([0.0], [1.0])
        cs = new_constraint([[1.0]], [5.0])
        law = condition(params, cs)
        draws = sample_gaussian(law, np.random.default_rng(0), 100)
        np.testing.assert_array_equal(draws, np.full((100, 1), 5.0))

    def test_empirical_mean_converges(self):
        params = GaussianParams.diagonal([1.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        law = condition(params, cs)
        draws = sample_gaussian(law, np.random.default_rng(3), 1_000_000)
        assert abs(draws[:, 0].mean() - 0.5) <= 3 * np.sqrt(0.5 / 1e6)

    def test_determinism(self):
        params = GaussianParams.diagonal([0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        cs = new_constraint([[1.0, 1.0, 1.0]], [1.0])
        law = condition(params, cs)
        a = sample_gaussian(law, np.random.default_rng(42), 50)
        b = sample_gaussian(law, np.random.default_rng(42), 50)
        np.testing.assert_array_equal(a, b)

    def test_count_validation(self):
        params = GaussianParams.diagonal([0.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        law = condition(params, cs)
        with pytest.raises(ValidationError):
            sample_gaussian(law, np.random.default_rng(0), 0)


class TestMarginalPdf:
    def setup_method(self):
        params = GaussianParams.diagonal([0.0, 0.0], [1.0, 1.0])
        cs = new_constraint([[1.0, 1.0]], [0.0])
        self.law = condition(params, cs)

    def test_density_at_mean(self):
        expected = 1.0 / np.sqrt(2 * np.pi * 0.5)
        assert marginal_pdf(self.law, 0, 0.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.5641895835, rel=1e-9)

    def test_density_one_sigma_out(self):
        sd = np.sqrt(0.5)
        expected = np.exp(-0.5) / np.sqrt(2 * np.pi * 0.5)
        assert marginal_pdf(self.law, 0, sd) == pytest.approx(expected, rel=1e-12)

    def test_degenerate_marginal(self):
        params = GaussianParams.diagonal([0.0], [1.0])
        cs = new_constraint([[1.0]], [5.0])
        law = condition(params, cs)
        with pytest.raises(DegenerateMarginal):
            marginal_pdf(law, 0, 5.0)

    def test_index_out_of_range(self):
        with pytest.raises(DimensionMismatch):
            marginal_pdf(self.law, 2, 0.0)


class TestUnconstrainedPdf:
    def test_standard_normal_at_zero(self):
        params = GaussianParams.diagonal([0.0, 1.0], [1.0, 1.0])
        assert unconstrained_pdf(params, 0, 0.0) == pytest.approx(
            1.0 / np.sqrt(2 * np.pi), rel=1e-12
        )

    def test_standard_normal_at_one(self):
        params = GaussianParams.diagonal([0.0], [1.0])
        assert unconstrained_pdf(params, 0, 1.0) == pytest.approx(
            np.exp(-0.5) / np.sqrt(2 * np.pi), rel=1e-12
        )

    def test_wider_normal_at_mean(self):
        params = GaussianParams.diagonal([2.0], [4.0])
        assert unconstrained_pdf(params, 0, 2.0) == pytest.approx(
            1.0 / np.sqrt(8 * np.pi), rel=1e-12
        )
