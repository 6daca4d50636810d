import json
import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from gatedpricer import rationality as rat
from gatedpricer.baselines.black_scholes import BlackScholesSurface
from gatedpricer.gated_net import MultiModel, MultiModelParams, SingleModel, SingleModelParams
from gatedpricer.rationality import CheckGrid, DensityCurve


def payoff(m, tau):
    return np.maximum(0.0, 1.0 - np.asarray(m, float)) + 0.0 * np.asarray(tau, float)


def lognormal_pdf(S_T, S, sigma, r, tau):
    """Terminal density of geometric Brownian motion, independent of the pricing code."""
    return stats.lognorm.pdf(S_T, s=sigma * math.sqrt(tau), scale=S * math.exp((r - 0.5 * sigma**2) * tau))


class TestCheckConditions:
    def test_single_model_hard_conditions_hold_for_every_seed(self):
        for seed in range(25):
            for scheme in ("kink_spread", "uniform_bias"):
                p = SingleModelParams.initialize(5, np.random.default_rng(seed), scheme=scheme)
                report = rat.check_conditions(SingleModel(p))
                for name in ("C1", "C2", "C3", "C4"):
                    assert report[name].status == rat.PASS, (seed, scheme, name, report[name])

    def test_expiry_payoff(self):
        report = rat.check_conditions(payoff)
        assert report["C5"].status == rat.PASS and report["C5"].worst == 0.0
        assert report["C1"].status == rat.PASS
        assert report["C6"].status == rat.PASS
        # the kink is convex, so a second difference there is large and positive
        assert report["C2"].status == rat.PASS

    def test_concave_surface_fails_c2_at_its_location(self):
        def bump(m, tau):
            m = np.asarray(m, float)
            return np.maximum(0.0, 1.0 - m) + 0.05 * np.exp(-((m - 2.0) ** 2) / 0.01)

        report = rat.check_conditions(bump)
        c2 = report["C2"]
        assert c2.status == rat.FAIL and c2.worst < 0
        assert c2.m == pytest.approx(2.0, abs=0.02)
        assert "C2" in report.failures() and not report.passed

    def test_worst_point_is_grid_minimum(self):
        model = MultiModel(MultiModelParams.initialize(9, 5, 5, np.random.default_rng(3)))
        grid = CheckGrid(m=np.linspace(0.3, 3, 60), tau=np.array([0.05, 0.5]))
        report = rat.check_conditions(model, grid)
        M, T = np.meshgrid(grid.m, grid.tau)
        d2 = model.d2m(M.ravel(), T.ravel())
        c2 = report["C2"]
        assert c2.worst == pytest.approx(d2.min())
        i = int(np.argmin(d2))
        assert (c2.m, c2.tau) == (pytest.approx(M.ravel()[i]), pytest.approx(T.ravel()[i]))

    def test_c4_fails_for_a_surface_that_never_decays(self):
        report = rat.check_conditions(lambda m, tau: 0.01 + payoff(m, tau))
        assert report["C4"].status == rat.FAIL

    def test_soft_conditions_are_graded(self):
        near = rat.check_conditions(lambda m, tau: payoff(m, tau) + 0.01)
        far = rat.check_conditions(lambda m, tau: payoff(m, tau) + 0.2)
        assert near["C5"].status == rat.SOFT_PASS and near["C5"].ok
        assert far["C5"].status == rat.FAIL

    def test_c6_upper_bound(self):
        report = rat.check_conditions(lambda m, tau: 1.2 * np.exp(-np.asarray(m)) + 0 * np.asarray(tau))
        assert report["C6"].status == rat.FAIL

    def test_bs_surface_passes_everything(self):
        report = rat.check_conditions(BlackScholesSurface(0.2, r=0.03), CheckGrid(r=0.03))
        assert report.passed, report.failures()

    def test_report_serialisation(self):
        report = rat.check_conditions(payoff)
        doc = json.loads(report.to_json())
        assert sorted(doc["conditions"]) == list(rat.CONDITIONS)
        assert doc["grid"]["n_m"] == 400 and doc["grid"]["m_large"] == 50.0

    def test_report_requires_every_condition(self):
        with pytest.raises(ValueError):
            rat.RationalityReport({"C1": None}, {})

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            CheckGrid(m=[])


@pytest.fixture(scope="module")
def bs_curve():
    surface = BlackScholesSurface(0.2, r=0.0)
    S_T = np.linspace(20, 300, 1401)
    return rat.extract_density(surface, 100.0, 1.0, 0.0, S_T, h=1e-3, method="fd")


class TestExtractDensity:
    def test_bs_surface_matches_lognormal(self, bs_curve):
        expected = lognormal_pdf(bs_curve.S_T, 100.0, 0.2, 0.0, 1.0)
        assert np.max(np.abs(bs_curve.f - expected)) < 5e-4
        assert bs_curve.valid and bs_curve.stable

    def test_bs_surface_with_rate(self):
        S_T = np.linspace(60, 150, 301)
        curve = rat.extract_density(BlackScholesSurface(0.25, r=0.05), 100.0, 30 / 365, 0.05, S_T, method="fd")
        assert np.max(np.abs(curve.f - lognormal_pdf(S_T, 100.0, 0.25, 0.05, 30 / 365))) < 5e-4

    def test_single_model_analytic_matches_finite_difference(self, single_params):
        model = SingleModel(single_params)
        S_T = np.linspace(20, 300, 200)
        a = rat.extract_density(model, 100.0, 0.1, S_T=S_T, method="analytic")
        f = rat.extract_density(model, 100.0, 0.1, S_T=S_T, h=1e-3, method="fd")
        assert a.method == "analytic" and f.method == "fd"
        assert np.max(np.abs(a.f - f.f)) < 1e-4

    def test_auto_method(self, single_params, multi_params):
        assert rat.extract_density(SingleModel(single_params), 100.0, 0.1).method == "analytic"
        assert rat.extract_density(MultiModel(multi_params), 100.0, 0.1).method == "fd"

    def test_integral_is_trapezoid_of_curve(self, bs_curve):
        assert bs_curve.integral == pytest.approx(trapezoid(bs_curve.f, bs_curve.S_T), abs=1e-15)

    def test_slope_equals_cdf_minus_one(self, single_params):
        model = SingleModel(single_params)
        S, tau = 100.0, 0.2
        S_T = np.linspace(0.5, 500, 5000)
        curve = rat.extract_density(model, S, tau, S_T=S_T)
        # d c_tilde / dK = dy/dm; F(K) accumulated from the lowest grid strike
        slope = model.dm(S_T / S, np.full_like(S_T, tau))
        offset = model.dm(S_T[0] / S, tau)
        assert np.max(np.abs(slope - (offset + curve.cdf()))) < 1e-4

    def test_non_convex_model_is_invalid(self):
        def bump(m, tau):
            m = np.asarray(m, float)
            return np.maximum(0.0, 1.0 - m) + 0.05 * np.exp(-((m - 1.2) ** 2) / 0.01)

        curve = rat.extract_density(bump, 100.0, 0.1, S_T=np.linspace(50, 200, 400))
        assert curve.min_value < 0 and not curve.valid

    def test_unstable_when_step_is_too_coarse(self):
        curve = rat.extract_density(payoff, 1.0, 0.1, S_T=np.linspace(0.5, 1.5, 11), h=0.05, method="fd")
        assert not curve.stable

    def test_grid_validation(self, single_params):
        model = SingleModel(single_params)
        with pytest.raises(ValueError):
            rat.extract_density(model, 100.0, 0.1, S_T=[10, 5])
        with pytest.raises(ValueError):
            rat.extract_density(model, 0.0, 0.1)
        with pytest.raises(ValueError):
            rat.extract_density(model, 100.0, 0.1, method="spline")
        with pytest.raises(ValueError):
            DensityCurve([1, 2], [0.1], 1.0, 0.1, 0.0, 1.0, 0.0)


class TestMoments:
    def test_lognormal_mean(self, bs_curve):
        mom = rat.density_moments(bs_curve)
        assert abs(mom.mean - 100.0) < 0.5
        sd2 = 100.0**2 * (math.exp(0.04) - 1)
        assert mom.variance == pytest.approx(sd2, rel=0.02)
        assert mom.trusted

    def test_symmetric_density_has_no_skew(self):
        x = np.linspace(50, 150, 2001)
        f = stats.norm.pdf(x, 100, 10)
        d = DensityCurve(x, f, 100.0, 1.0, 0.0, trapezoid(f, x), f.min())
        mom = rat.density_moments(d)
        assert abs(mom.skewness) < 1e-9
        assert mom.kurtosis == pytest.approx(3.0, abs=1e-3)

    def test_narrow_density_has_vanishing_variance(self):
        x = np.linspace(99, 101, 4001)
        variances = []
        for width in (0.1, 0.01, 0.001):
            f = stats.norm.pdf(x, 100, width)
            variances.append(rat.density_moments(DensityCurve(x, f, 100.0, 1.0, 0.0, 1.0, 0.0)).variance)
        assert variances[0] > variances[1] > variances[2] and variances[2] < 1e-5

    def test_invalid_curve_is_untrusted(self):
        x = np.linspace(50, 150, 101)
        f = stats.norm.pdf(x, 100, 10) * 2
        mom = rat.density_moments(DensityCurve(x, f, 100.0, 1.0, 0.0, trapezoid(f, x), f.min()))
        assert not mom.trusted and mom.mean == pytest.approx(100.0)
