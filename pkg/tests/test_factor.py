"""Factor-analysis numerics: closed-form oracles and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import (
    EFA_GENERATOR_LOADINGS,
    EFA_VARIABLE_NAMES,
    efa_population_correlation,
)
from oss_health.factor import (
    IdentificationError,
    align_columns,
    assign_indicators,
    comparative_fit_index,
    correlation_matrix,
    cronbach_alpha,
    efa_fit_indices,
    efa_ml,
    efa_principal_axis,
    eigenvalues,
    mcdonald_omega,
    parallel_analysis,
    rotate_solution,
    srmr,
    variance_table,
    varimax,
    varimax_criterion,
)


def one_factor_population(p=4, lam=0.8):
    L = np.full((p, 1), lam)
    R = L @ L.T
    np.fill_diagonal(R, 1.0)
    return R


class TestCorrelationMatrix:
    def test_identical_columns_rejected_vs_perfect(self):
        X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        R = correlation_matrix(X)
        assert R[0, 1] == pytest.approx(1.0)

    def test_reverse_scored_column_is_minus_one(self):
        x = np.array([1.0, 4.0, 2.0, 9.0])
        X = np.column_stack([x, 14.0 + 1.0 - x])
        assert correlation_matrix(X)[0, 1] == pytest.approx(-1.0)

    def test_constant_column_named(self):
        X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        with pytest.raises(ValueError, match="alexa"):
            correlation_matrix(X, names=["stars", "alexa"])


class TestEigenvalues:
    def test_identity(self):
        assert np.allclose(eigenvalues(np.eye(9)), np.ones(9))

    def test_two_by_two_closed_form(self):
        R = np.array([[1.0, 0.3], [0.3, 1.0]])
        assert np.allclose(eigenvalues(R), [1.3, 0.7])

    def test_sum_equals_trace(self):
        R = efa_population_correlation()
        assert eigenvalues(R).sum() == pytest.approx(np.trace(R), abs=1e-8)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            eigenvalues(np.array([[1.0, 0.5], [0.2, 1.0]]))


class TestParallelAnalysis:
    def _factor_data(self, seed, n=384):
        R = efa_population_correlation()
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, 9)) @ np.linalg.cholesky(R).T

    def test_deterministic(self):
        X = self._factor_data(0)
        a = parallel_analysis(X, seed=11)
        b = parallel_analysis(X, seed=11)
        assert a.suggested_factors == b.suggested_factors
        assert np.array_equal(a.simulated_mean_eigenvalues, b.simulated_mean_eigenvalues)

    def test_two_factor_data_suggests_two(self):
        assert parallel_analysis(self._factor_data(5), seed=1).suggested_factors == 2

    def test_noise_mean_suggestion_small(self):
        rng = np.random.default_rng(99)
        suggested = [
            parallel_analysis(
                rng.standard_normal((200, 10)), n_sims=40, seed=s, basis="full"
            ).suggested_factors
            for s in range(20)
        ]
        assert np.mean(suggested) <= 1.0  # full basis, p=10: rarely above p/10

    def test_mean_comparison_counts_exceedances(self):
        result = parallel_analysis(self._factor_data(3), seed=2, comparison="mean")
        expected = 0
        for obs, sim in zip(result.observed_eigenvalues, result.simulated_mean_eigenvalues):
            if obs > sim:
                expected += 1
            else:
                break
        assert result.suggested_factors == expected

    def test_bad_arguments(self):
        X = self._factor_data(0, n=50)
        with pytest.raises(ValueError):
            parallel_analysis(X, n_sims=0)
        with pytest.raises(ValueError):
            parallel_analysis(X, basis="bogus")


class TestEfaMl:
    def test_zero_residual_one_factor_recovery(self):
        R = one_factor_population()
        solution, fit = efa_ml(R, n=500, m=1)
        assert np.allclose(solution.loadings[:, 0], 0.8, atol=1e-4)
        assert np.allclose(solution.uniquenesses, 0.36, atol=1e-4)
        assert fit.chi_square < 1e-6
        assert solution.converged

    def test_identification_error(self):
        with pytest.raises(IdentificationError):
            efa_ml(one_factor_population(), n=100, m=3)

    def test_communality_identity(self):
        solution, _ = efa_ml(efa_population_correlation(), n=384, m=2)
        assert np.allclose(
            solution.communalities + solution.uniquenesses, 1.0, atol=1e-5
        )
        assert solution.ss_loadings.sum() == pytest.approx(
            solution.communalities.sum(), abs=1e-8
        )

    def test_bartlett_chi_square_scale(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((384, 9)) @ np.linalg.cholesky(efa_population_correlation()).T
        R = correlation_matrix(X)
        _, fit = efa_ml(R, n=384, m=1)  # deliberately under-factored
        p, m = 9, 1
        assert fit.df == ((p - m) ** 2 - p - m) // 2
        assert fit.chi_square > fit.df  # misfit shows up
        assert fit.bic == pytest.approx(fit.chi_square - fit.df * math.log(384))

    def test_doublet_exclusion_lowers_bic(self):
        # 9 generator variables plus an isolated response-time doublet:
        # a 2-factor model cannot absorb the doublet, so excluding the
        # pair must improve (lower) BIC, mirroring 276.252 -> -36.737.
        R9 = efa_population_correlation()
        R11 = np.eye(11)
        R11[:9, :9] = R9
        R11[9, 10] = R11[10, 9] = 0.8
        rng = np.random.default_rng(7)
        X = rng.standard_normal((384, 11)) @ np.linalg.cholesky(R11).T
        R_full = correlation_matrix(X)
        _, fit_full = efa_ml(R_full, n=384, m=2)
        _, fit_excl = efa_ml(R_full[:9, :9], n=384, m=2)
        assert fit_excl.bic < fit_full.bic


class TestPrincipalAxis:
    def test_zero_residual_recovery(self):
        solution = efa_principal_axis(one_factor_population(), m=1)
        assert np.allclose(solution.loadings[:, 0], 0.8, atol=1e-3)
        assert solution.converged

    def test_identity_has_no_common_variance(self):
        solution = efa_principal_axis(np.eye(6), m=1)
        assert np.all(np.abs(solution.loadings) < 0.05)

    def test_agrees_with_ml_on_simulated_data(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((384, 9)) @ np.linalg.cholesky(efa_population_correlation()).T
        R = correlation_matrix(X)
        ml = rotate_solution(efa_ml(R, n=384, m=2)[0])
        paf = rotate_solution(efa_principal_axis(R, m=2))
        aligned = align_columns(ml.loadings, paf.loadings)
        assert np.max(np.abs(aligned - ml.loadings)) < 0.05


class TestVarimax:
    def test_block_diagonal_fixed_point(self):
        L = np.zeros((6, 2))
        L[:3, 0] = 0.8
        L[3:, 1] = 0.7
        rotated, _ = varimax(L)
        aligned = align_columns(L, rotated)
        assert np.allclose(aligned, L, atol=1e-8)

    def test_two_column_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        L = rng.normal(size=(8, 2))
        rotated, rotation = varimax(L)
        best = max(
            varimax_criterion(
                L @ np.array(
                    [
                        [math.cos(t), -math.sin(t)],
                        [math.sin(t), math.cos(t)],
                    ]
                )
            )
            for t in np.arange(0.0, math.pi / 2, 1e-4)
        )
        assert varimax_criterion(rotated) == pytest.approx(best, abs=1e-3)
        assert np.allclose(rotated, L @ rotation)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_orthogonality_and_communalities(self, seed):
        rng = np.random.default_rng(seed)
        L = rng.normal(size=(rng.integers(3, 10), rng.integers(2, 4)))
        rotated, rotation = varimax(L)
        assert np.allclose(rotation.T @ rotation, np.eye(L.shape[1]), atol=1e-10)
        assert np.allclose(
            (rotated**2).sum(axis=1), (L**2).sum(axis=1), atol=1e-10
        )

    def test_one_column_unchanged(self):
        L = np.array([[0.5], [0.6]])
        rotated, rotation = varimax(L)
        assert np.array_equal(rotated, L)
        assert np.array_equal(rotation, np.eye(1))


class TestVarianceTable:
    def test_single_column(self):
        ss, cumulative, proportion = variance_table(np.full((4, 1), 0.5))
        assert ss[0] == pytest.approx(1.0)
        assert cumulative[0] == pytest.approx(0.25)
        assert proportion[0] == 1.0

    def test_proportions_sum_to_one(self):
        _, _, proportion = variance_table(EFA_GENERATOR_LOADINGS)
        assert proportion.sum() == pytest.approx(1.0)

    def test_generator_ss_matches_published_table(self):
        ss, cumulative, proportion = variance_table(EFA_GENERATOR_LOADINGS)
        assert np.allclose(ss, [2.787, 1.868], atol=2e-3)
        assert np.allclose(cumulative, [0.310, 0.517], atol=1e-3)
        assert np.allclose(proportion, [0.599, 0.401], atol=1e-3)


class TestFitIndices:
    def test_rmsea_zero_at_chi_equal_df(self):
        _, rmsea = efa_fit_indices(50.0, 50, 500.0, 45, 200)
        assert rmsea == 0.0

    def test_rmsea_closed_form(self):
        _, rmsea = efa_fit_indices(100.0, 50, 500.0, 45, 101)
        assert rmsea == pytest.approx(0.1)

    def test_tli_closed_form(self):
        tli, _ = efa_fit_indices(50.0, 40, 500.0, 45, 200)
        assert tli == pytest.approx((500 / 45 - 50 / 40) / (500 / 45 - 1), abs=1e-6)
        assert tli == pytest.approx(0.9753, abs=1e-4)

    def test_null_ratio_one_rejected(self):
        with pytest.raises(ZeroDivisionError):
            efa_fit_indices(10.0, 10, 45.0, 45, 100)

    def test_cfi_closed_form(self):
        cfi = comparative_fit_index(150.0, 50, 1000.0, 55)
        assert cfi == pytest.approx(1 - 100 / 945, abs=1e-6)
        assert cfi == pytest.approx(0.8942, abs=1e-4)

    def test_cfi_perfect_fit(self):
        assert comparative_fit_index(10.0, 20, 500.0, 45) == 1.0

    def test_srmr_zero_at_perfect_fit(self):
        R = efa_population_correlation()
        assert srmr(R, R) == 0.0


class TestReliability:
    def test_alpha_identical_items(self):
        x = np.random.default_rng(0).normal(size=100)
        items = np.column_stack([x, x, x])
        assert cronbach_alpha(items) == pytest.approx(1.0)

    def test_alpha_uncorrelated_items_zero(self):
        cov = np.eye(2)
        rng = np.random.default_rng(1)
        items = rng.multivariate_normal([0, 0], cov, size=200_000)
        assert cronbach_alpha(items) == pytest.approx(0.0, abs=0.02)

    def test_alpha_half_correlation_closed_form(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        rng = np.random.default_rng(2)
        items = rng.multivariate_normal([0, 0], cov, size=200_000)
        assert cronbach_alpha(items) == pytest.approx(2 / 3, abs=0.01)

    def test_alpha_population_formula(self):
        # exact check without sampling noise: synthesize items whose
        # sample covariance is exactly [[1, .5], [.5, 1]]
        base = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        cov_target = np.array([[1.0, 0.5], [0.5, 1.0]])
        chol = np.linalg.cholesky(cov_target)
        items = (base / base.std(axis=0, ddof=1)) @ chol.T
        assert cronbach_alpha(items) == pytest.approx(2 / 3)

    def test_omega_perfect(self):
        assert mcdonald_omega([1.0, 1.0], [0.0, 0.0]) == 1.0

    def test_omega_closed_form(self):
        omega = mcdonald_omega([0.8] * 4, [0.36] * 4)
        assert omega == pytest.approx(10.24 / (10.24 + 1.44))
        assert omega == pytest.approx(0.8767, abs=1e-4)

    def test_omega_zero_loadings(self):
        assert mcdonald_omega([0.0, 0.0], [1.0, 1.0]) == 0.0


class TestAssignIndicators:
    def test_published_loading_matrix_structure(self):
        assignment, dropped = assign_indicators(
            EFA_GENERATOR_LOADINGS, EFA_VARIABLE_NAMES, cutoff=0.3
        )
        assert assignment[0] == ["forks", "stars", "mentions"]
        assert assignment[1] == ["criticality", "months_since_update", "cmc_rank", "geo_rmse"]
        assert dropped == ["longevity_days", "alexa_rank"]

    def test_everything_below_cutoff_dropped(self):
        assignment, dropped = assign_indicators(
            np.full((3, 2), 0.1), ["a", "b", "c"], cutoff=0.3
        )
        assert all(not members for members in assignment.values())
        assert dropped == ["a", "b", "c"]

    def test_tie_goes_to_lower_index(self):
        assignment, _ = assign_indicators(np.array([[0.5, 0.5]]), ["x"], cutoff=0.3)
        assert assignment[0] == ["x"]
        assert assignment[1] == []


class TestRotateSolution:
    def test_rotation_tracks_loadings(self):
        solution, _ = efa_ml(efa_population_correlation(), n=384, m=2)
        rotated = rotate_solution(solution)
        assert np.allclose(
            solution.loadings @ rotated.rotation, rotated.loadings, atol=1e-8
        )
        assert np.allclose(rotated.communalities, solution.communalities, atol=1e-8)

    def test_sign_convention(self):
        solution, _ = efa_ml(efa_population_correlation(), n=384, m=2)
        rotated = rotate_solution(solution)
        for j in range(rotated.loadings.shape[1]):
            column = rotated.loadings[:, j]
            assert column[np.abs(column).argmax()] > 0
