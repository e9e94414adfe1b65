from fractions import Fraction

import numpy as np
import pytest

from rdlearn import (ContractError, Dataset, DomainError, bias_of_naive_beta,
                     binary_unbiased_beta, estimate_gamma,
                     fit_propensity_mlogit, known_constant_propensity,
                     known_function_propensity, sandwich_covariance,
                     significance_stars, wald_table, wald_tests,
                     zero_main_effect)


def heterogeneous_dataset(seed, n=200, p=3, sigma=1.0):
    """Known covariate-dependent propensity, linear effects, linear main."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    p1 = 0.2 + 0.6 * (x[:, 0] < 0)
    a = np.where(rng.uniform(size=n) < p1, 1, 2)
    signs = np.where(a == 1, 1.0, -1.0)
    delta1 = 0.5 - 0.5 * x[:, 0] + 0.2 * x[:, 1]
    y = 1.0 + x[:, 0] + signs * delta1 + sigma * rng.normal(size=n)
    return Dataset(x=x, a=a, y=y, k=2)


def heterogeneous_propensity(clip=0.01):
    def func(x):
        p1 = 0.2 + 0.6 * (x[:, 0] < 0)
        return np.column_stack([p1, 1.0 - p1])
    return known_function_propensity(func, k=2, clip=clip)


class TestExactBias:
    def test_toy_value(self):
        assert bias_of_naive_beta() == Fraction(17, 135)

    def test_balanced_assignment_unbiased(self):
        assert bias_of_naive_beta(p1=Fraction(1, 2)) == 0

    def test_zero_residual_unbiased(self):
        assert bias_of_naive_beta(r=Fraction(0)) == 0

    def test_scales_linearly_in_residual(self):
        assert bias_of_naive_beta(r=Fraction(3)) == Fraction(17, 45)


class TestGammaEstimate:
    def test_two_point_toy(self):
        # n=2, intercept-only effects with p = 1/2: gamma_1 = [1].
        data = Dataset(x=np.zeros((2, 1)), a=np.array([1, 2]),
                       y=np.array([1.0, -1.0]), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        est = estimate_gamma(data, prop, zero_main_effect())
        np.testing.assert_allclose(est.gamma[0], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(est.gamma[1], [-1.0, 0.0], atol=1e-12)

    def test_zero_residual_gives_zero(self):
        rng = np.random.default_rng(0)
        data = Dataset(x=rng.normal(size=(30, 2)),
                       a=rng.choice(2, size=30) + 1,
                       y=np.zeros(30), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        est = estimate_gamma(data, prop, zero_main_effect())
        np.testing.assert_allclose(est.gamma, 0.0, atol=1e-14)

    def test_binary_form_equals_first_row(self):
        data = heterogeneous_dataset(1)
        prop = heterogeneous_propensity()
        est = estimate_gamma(data, prop, zero_main_effect())
        beta = binary_unbiased_beta(data, prop, zero_main_effect())
        np.testing.assert_allclose(beta, est.gamma[0], atol=1e-12)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(2)
        data = Dataset(x=rng.normal(size=(120, 3)),
                       a=rng.choice(3, size=120) + 1,
                       y=rng.normal(size=120), k=3)
        prop = known_constant_propensity([1 / 3] * 3)
        est = estimate_gamma(data, prop, zero_main_effect())
        np.testing.assert_allclose(est.gamma.sum(axis=0), 0.0, atol=1e-10)

    def test_unbiased_under_wrong_main_effect(self):
        # Known propensity, mhat = 0 (wrong): mean over replications of
        # gamma_1 is still the true effect coefficients.
        truth = np.array([0.5, -0.5, 0.2, 0.0])
        reps = 400
        total = np.zeros(4)
        prop = heterogeneous_propensity()
        for rep in range(reps):
            data = heterogeneous_dataset(1000 + rep, n=100)
            total += estimate_gamma(data, prop, zero_main_effect()).gamma[0]
        mean = total / reps
        # Monte Carlo SE of the mean is roughly 0.25 / sqrt(400) = 0.0125.
        assert np.abs(mean - truth).max() < 0.05

    def test_estimated_propensity_rejected(self):
        data = heterogeneous_dataset(3)
        fitted = fit_propensity_mlogit(data)
        with pytest.raises(ContractError):
            estimate_gamma(data, fitted, zero_main_effect())
        with pytest.raises(ContractError):
            sandwich_covariance(data, fitted, zero_main_effect())


class TestSandwich:
    def test_symmetric_and_psd(self):
        data = heterogeneous_dataset(4)
        prop = heterogeneous_propensity()
        report = sandwich_covariance(data, prop, zero_main_effect())
        cov = report.covariance
        np.testing.assert_allclose(cov, cov.T, atol=1e-10)
        eigmin = np.linalg.eigvalsh(cov).min()
        assert eigmin >= -1e-8 * max(1.0, np.abs(cov).max())

    def test_alternative_outer_form_runs(self):
        data = heterogeneous_dataset(5)
        prop = heterogeneous_propensity()
        report = sandwich_covariance(data, prop, zero_main_effect(),
                                     form="as-written-J")
        assert report.form == "as-written-J"
        assert report.se.shape == (2, 4)

    def test_unknown_form_rejected(self):
        data = heterogeneous_dataset(6)
        with pytest.raises(DomainError):
            sandwich_covariance(data, heterogeneous_propensity(),
                                zero_main_effect(), form="bogus")

    def test_intercept_only_homoskedastic_se(self):
        # Pure noise, balanced arms, intercept-only design: the effect
        # intercept SE approaches sigma / (2 sqrt(n)) * 2 = sigma/sqrt(n)
        # ... verified numerically against the empirical spread instead.
        reps, n, sigma = 300, 2000, 1.5
        prop = known_constant_propensity([0.5, 0.5])
        estimates, reported = [], []
        for rep in range(reps):
            rng = np.random.default_rng((7, rep))
            data = Dataset(x=np.zeros((n, 1)),
                           a=rng.choice(2, size=n) + 1,
                           y=sigma * rng.normal(size=n), k=2)
            report = sandwich_covariance(data, prop, zero_main_effect())
            estimates.append(report.estimate.gamma[0, 0])
            reported.append(report.se[0, 0])
        empirical_sd = np.std(estimates)
        assert np.mean(reported) == pytest.approx(empirical_sd, rel=0.10)

    def test_se_scales_as_root_n(self):
        prop = heterogeneous_propensity()
        scaled = []
        for n in (200, 800):
            ses = []
            for rep in range(20):
                data = heterogeneous_dataset((n, rep), n=n)
                report = sandwich_covariance(data, prop, zero_main_effect())
                ses.append(report.se[0, 1])
            scaled.append(np.mean(ses) * np.sqrt(n))
        assert abs(scaled[0] - scaled[1]) / scaled[1] < 0.2

    def test_wald_size_near_nominal(self):
        # Null coefficient x3: rejection rate at the 5% level stays near
        # 0.05 across cheap replications.
        prop = heterogeneous_propensity()
        rejections = 0
        reps = 400
        for rep in range(reps):
            data = heterogeneous_dataset(5000 + rep, n=300)
            report = sandwich_covariance(data, prop, zero_main_effect())
            if report.p_values[0, 3] < 0.05:
                rejections += 1
        rate = rejections / reps
        assert 0.02 <= rate <= 0.09


class TestWaldReporting:
    def test_zero_estimate_p_one(self):
        data = Dataset(x=np.zeros((2, 1)), a=np.array([1, 2]),
                       y=np.zeros(2), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        report = sandwich_covariance(data, prop, zero_main_effect())
        rows = wald_tests(report)
        assert rows[0]["p"] == pytest.approx(1.0)
        assert rows[0]["stars"] == ""

    def test_stars_thresholds(self):
        assert significance_stars(0.0005) == "***"
        assert significance_stars(0.005) == "**"
        assert significance_stars(0.03) == "*"
        assert significance_stars(0.07) == "."
        assert significance_stars(0.5) == ""

    def test_ci_matches_z_crit(self):
        data = heterogeneous_dataset(8)
        prop = heterogeneous_propensity()
        report = sandwich_covariance(data, prop, zero_main_effect())
        np.testing.assert_allclose(
            report.ci_high - report.ci_low, 2 * 1.959964 * report.se,
            atol=1e-5)

    def test_table_renders_all_rows(self):
        data = heterogeneous_dataset(9)
        prop = heterogeneous_propensity()
        report = sandwich_covariance(data, prop, zero_main_effect())
        text = wald_table(report)
        lines = text.splitlines()
        assert len(lines) == 1 + 2 * 4
        assert "coefficient" in lines[0]
        assert "intercept" in lines[1]
