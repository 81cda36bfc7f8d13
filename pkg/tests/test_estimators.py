import math

import numpy as np
import pytest

from matchbench import (
    MatchedSample,
    MomentSet,
    NumericalError,
    cca,
    cca_ratio_scalar_y,
    compute_moments,
    consistency_condition,
    counterexample_market,
    counterexample_population_moments,
    exponential,
    gaussian,
    gaussian_market,
    mrs_estimate,
    normalize_weights,
    ols_index,
    population_moments_gaussian,
    rademacher,
    simulate_market,
    uniform01,
)
from matchbench.estimators import kernel_regression
from matchbench.market import MarketSpec

E2 = math.exp(-2.0)
COV_X1 = (1.0 - E2) / 4.0
COV_X2 = (3.0 * E2 + 1.0) / 8.0
CCA_RATIO = (3.0 + math.exp(2.0)) / (2.0 * math.exp(2.0) - 2.0)


def random_sample(rng, n=400, dx=3, dy=2, noise=0.3) -> MatchedSample:
    xs = rng.normal(size=(n, dx))
    alpha = rng.normal(size=dx)
    base = xs @ alpha
    ys = np.column_stack([base + noise * rng.normal(size=n) for _ in range(dy)])
    ys[:, 1:] += rng.normal(size=(n, dy - 1)) if dy > 1 else 0.0
    return MatchedSample(xs=xs, ys=ys)


class TestNormalizeWeights:
    def test_unit_norm_and_sign(self):
        w = normalize_weights([-3.0, 4.0])
        np.testing.assert_allclose(w, [0.6, -0.8])
        assert abs(np.linalg.norm(w) - 1.0) < 1e-15

    def test_leading_zero_skipped(self):
        w = normalize_weights([0.0, -2.0])
        np.testing.assert_allclose(w, [0.0, 1.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            normalize_weights([0.0, 0.0])


class TestComputeMoments:
    def test_identical_rows_give_zero(self):
        sample = MatchedSample(xs=np.ones((5, 2)), ys=np.full((5, 1), 3.0))
        m = compute_moments(sample)
        assert not m.Sxx.any() and not m.Syy.any() and not m.Sxy.any()

    def test_two_couples_by_hand(self):
        sample = MatchedSample(xs=[[-1.0], [1.0]], ys=[[-1.0], [1.0]])
        m = compute_moments(sample)
        assert m.Sxy[0, 0] == 1.0
        assert m.Sxx[0, 0] == 1.0

    def test_counterexample_cross_moments(self, counterexample_sample_1m):
        sample = counterexample_sample_1m
        m = compute_moments(sample)
        vc = sample.ys[:, 0] - sample.ys[:, 0].mean()
        for column, target in ((0, COV_X1), (1, COV_X2)):
            xc = sample.xs[:, column] - sample.xs[:, column].mean()
            se = (xc * vc).std(ddof=1) / math.sqrt(sample.n)
            assert abs(m.Sxy[column, 0] - target) <= 3 * se

    def test_divisor_is_n(self):
        sample = MatchedSample(xs=[[0.0], [2.0]], ys=[[0.0], [2.0]])
        assert compute_moments(sample).Sxx[0, 0] == 1.0  # divisor n=2, not n-1

    def test_symmetric_psd_and_cauchy_schwarz(self, rng):
        for _ in range(10):
            sample = random_sample(rng, n=150, dx=3, dy=2)
            m = compute_moments(sample)
            np.testing.assert_allclose(m.Sxx, m.Sxx.T, atol=1e-14)
            np.testing.assert_allclose(m.Syy, m.Syy.T, atol=1e-14)
            assert np.linalg.eigvalsh(m.Sxx).min() >= -1e-12
            assert np.linalg.eigvalsh(m.Syy).min() >= -1e-12
            bound = np.sqrt(np.outer(np.diag(m.Sxx), np.diag(m.Syy)))
            assert np.all(np.abs(m.Sxy) <= bound + 1e-12)


class TestCca:
    def test_scalar_case_objective_is_correlation(self, rng):
        xs = rng.normal(size=(300, 1))
        ys = -0.8 * xs + 0.4 * rng.normal(size=(300, 1))
        m = compute_moments(MatchedSample(xs=xs, ys=ys))
        corr = abs(m.Sxy[0, 0]) / math.sqrt(m.Sxx[0, 0] * m.Syy[0, 0])
        result = cca(m)
        assert abs(result.objective - corr) < 1e-12

    def test_gaussian_population_recovery(self):
        spec = gaussian_market([[1, 0.3], [0.3, 1]], [[1, -0.2], [-0.2, 1]],
                               np.array([1.0, 2.0]) / math.sqrt(5.0),
                               np.array([3.0, 1.0]) / math.sqrt(10.0))
        result = cca(population_moments_gaussian(spec))
        assert np.max(np.abs(result.alpha_hat - normalize_weights(spec.alpha))) < 1e-6
        assert np.max(np.abs(result.beta_hat - normalize_weights(spec.beta))) < 1e-6
        assert abs(result.objective - 1.0) < 1e-6

    def test_counterexample_population_ratio(self):
        result = cca(counterexample_population_moments())
        assert abs(result.alpha_hat[1] / result.alpha_hat[0] - CCA_RATIO) < 1e-9
        assert abs(result.alpha_hat[1] / result.alpha_hat[0] - 1.0) > 0.15

    def test_raw_weights_satisfy_unit_variance(self, rng):
        sample = random_sample(rng)
        m = compute_moments(sample)
        result = cca(m)
        a = result.diagnostics["alpha_raw"]
        b = result.diagnostics["beta_raw"]
        assert abs(a @ m.Sxx @ a - 1.0) < 1e-10
        assert abs(b @ m.Syy @ b - 1.0) < 1e-10
        assert 0.0 <= result.objective <= 1.0 + 1e-10

    def test_invariance_under_linear_maps(self, rng):
        sample = random_sample(rng)
        mx = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        my = np.eye(2) + 0.2 * rng.normal(size=(2, 2))
        mapped = MatchedSample(xs=sample.xs @ mx.T, ys=sample.ys @ my.T)
        r1 = cca(compute_moments(sample))
        r2 = cca(compute_moments(mapped))
        assert abs(r1.objective - r2.objective) < 1e-9
        series1 = sample.xs @ r1.diagnostics["alpha_raw"]
        series2 = mapped.xs @ r2.diagnostics["alpha_raw"]
        gap = min(np.max(np.abs(series1 - series2)), np.max(np.abs(series1 + series2)))
        assert gap < 1e-9

    def test_rank_deficient_rejected(self):
        with pytest.raises(NumericalError):
            cca(MomentSet(Sxx=np.zeros((2, 2)), Syy=np.eye(1), Sxy=np.zeros((2, 1))))


class TestCcaRatioScalarY:
    def test_matches_cca_on_population_moments(self):
        m = counterexample_population_moments()
        result = cca(m)
        assert abs(cca_ratio_scalar_y(m) - result.alpha_hat[0] / result.alpha_hat[1]) < 1e-9

    def test_symmetric_covariances_give_one(self):
        m = MomentSet(Sxx=np.eye(2), Syy=np.eye(1), Sxy=np.array([[0.3], [0.3]]))
        assert cca_ratio_scalar_y(m) == 1.0

    def test_zero_denominator_flagged(self):
        m = MomentSet(Sxx=np.eye(2), Syy=np.eye(1), Sxy=np.array([[1.0], [0.0]]))
        with pytest.raises(NumericalError):
            cca_ratio_scalar_y(m)

    def test_requires_two_by_one(self):
        with pytest.raises(ValueError):
            cca_ratio_scalar_y(MomentSet(Sxx=np.eye(3), Syy=np.eye(1), Sxy=np.zeros((3, 1))))


class TestOls:
    def test_exact_linear_recovery(self, rng):
        xs = rng.normal(size=(200, 2))
        alpha = np.array([0.6, -1.1])
        sample = MatchedSample(xs=xs, ys=(xs @ alpha).reshape(-1, 1))
        result = ols_index(sample)
        np.testing.assert_allclose(result.diagnostics["alpha_raw"], alpha, atol=1e-12)
        assert result.diagnostics["residual_variance"] < 1e-24

    def test_agrees_with_cca_for_scalar_y(self, rng):
        for _ in range(20):
            sample = random_sample(rng, n=300, dx=3, dy=1)
            r_ols = ols_index(sample)
            r_cca = cca(compute_moments(sample))
            assert np.max(np.abs(r_ols.alpha_hat - r_cca.alpha_hat)) < 1e-8
            assert np.max(np.abs(r_ols.beta_hat - r_cca.beta_hat)) < 1e-8

    def test_gaussian_market_dy2(self):
        spec = gaussian_market([[1, 0.3], [0.3, 1]], [[1, -0.2], [-0.2, 1]],
                               [1.0, 2.0], [3.0, 1.0])
        sample = simulate_market(spec, 100_000, seed=17)
        result = ols_index(sample)
        assert np.max(np.abs(result.beta_hat - normalize_weights(spec.beta))) < 0.02
        assert np.max(np.abs(result.alpha_hat - normalize_weights(spec.alpha))) < 0.02

    def test_constraint_diagnostics_present(self, rng):
        sample = random_sample(rng, dy=2)
        result = ols_index(sample)
        assert result.diagnostics["constraint_A"] > 0
        assert result.diagnostics["constraint_B"] > 0
        assert result.beta_hat[0] > 0  # first coordinate pinned positive by normalization

    def test_collinear_regressors_rejected(self, rng):
        xs = rng.normal(size=(100, 1))
        xs = np.hstack([xs, xs])  # duplicated column
        sample = MatchedSample(xs=xs, ys=rng.normal(size=(100, 1)))
        with pytest.raises(NumericalError):
            ols_index(sample)


class TestConsistencyCondition:
    def test_linear_map_passes(self):
        spec = MarketSpec(dx=2, dy=1, alpha=np.array([1.0, 2.0]) / math.sqrt(5.0), beta=[1.0],
                          p_components=(gaussian(1.0), gaussian(1.0)),
                          q_components=(gaussian(1.0),))
        check = consistency_condition(spec, tol=1e-8)
        assert check.holds
        assert abs(check.lhs - check.rhs) < 1e-6

    def test_counterexample_fails_with_known_ratio(self):
        check = consistency_condition(counterexample_market(), tol=1e-9)
        assert not check.holds
        assert abs(1.0 / check.rhs - CCA_RATIO) < 1e-6

    def test_degenerate_weight_passes_by_independence(self):
        spec = MarketSpec(dx=2, dy=1, alpha=[1.0, 0.0], beta=[1.0],
                          p_components=(rademacher(), exponential(1.0)),
                          q_components=(uniform01(),))
        check = consistency_condition(spec, tol=1e-9)
        assert check.holds
        assert abs(check.cov_x2) <= 1e-8


class TestPopulationMoments:
    def test_rejects_non_gaussian_components(self):
        with pytest.raises(ValueError):
            population_moments_gaussian(counterexample_market())

    def test_diagonal_component_form(self):
        spec = MarketSpec(dx=2, dy=1, alpha=[1.0, 1.0], beta=[2.0],
                          p_components=(gaussian(1.0), gaussian(3.0)),
                          q_components=(gaussian(0.5),))
        m = population_moments_gaussian(spec)
        np.testing.assert_allclose(np.diag(m.Sxx), [1.0, 9.0])
        result = cca(m)
        assert abs(result.objective - 1.0) < 1e-12


class TestMrs:
    def test_linear_single_index_ratio(self, rng):
        xs = rng.normal(size=(10_000, 2))
        alpha = np.array([1.0, 2.0]) / math.sqrt(5.0)
        sample = MatchedSample(xs=xs, ys=(xs @ alpha).reshape(-1, 1))
        result = mrs_estimate(sample)
        assert abs(result.ratio_matrix[0, 1] - 0.5) < 0.1
        assert result.stable.all()
        assert result.in_hull.all()

    def test_independent_response_flagged_unstable(self, rng):
        sample = MatchedSample(xs=rng.normal(size=(10_000, 2)), ys=rng.normal(size=(10_000, 1)))
        result = mrs_estimate(sample)
        assert not result.stable.any()

    def test_discrete_attribute_has_no_kernel_derivative(self):
        # the coin coordinate of the benchmark market sits 2/h bandwidths from
        # its twin atom, so its fitted partial derivative is numerically zero
        sample = simulate_market(counterexample_market(), 20_000, seed=19)
        result = mrs_estimate(sample)
        assert np.max(np.abs(result.derivatives[:, 0])) < 1e-9
        assert not result.stable[0]

    def test_derivatives_match_refit_at_shifted_points(self, rng):
        xs = rng.normal(size=(2_000, 2))
        sample = MatchedSample(xs=xs, ys=(xs @ np.array([1.0, 1.0])).reshape(-1, 1))
        result = mrs_estimate(sample, eval_points=xs[:5])
        h = result.bandwidths
        for i in range(2):
            step = np.zeros(2)
            step[i] = h[i] / 2.0
            refit = (kernel_regression(sample, 0, xs[:5] + step, h)
                     - kernel_regression(sample, 0, xs[:5] - step, h)) / h[i]
            np.testing.assert_allclose(result.derivatives[:, i], refit, atol=1e-6)

    def test_zero_variance_attribute_rejected(self):
        sample = MatchedSample(xs=np.column_stack([np.ones(50), np.arange(50.0)]),
                               ys=np.arange(50.0).reshape(-1, 1))
        with pytest.raises(NumericalError):
            mrs_estimate(sample)

    def test_outside_hull_flagged(self, rng):
        xs = rng.normal(size=(1_000, 2))
        sample = MatchedSample(xs=xs, ys=(xs @ np.array([1.0, 1.0])).reshape(-1, 1))
        far = np.array([[50.0, 0.0]])
        result = mrs_estimate(sample, eval_points=np.vstack([xs[:3], far]))
        assert result.in_hull[:3].all()
        assert not result.in_hull[3]
