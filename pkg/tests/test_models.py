import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from ettrack.ggiw import GammaParams, GaussianParams, GgiwParams, IWParams, extent_mean, gamma_mean
from ettrack.models import (
    LEGACY,
    MotionModel,
    SensorModel,
    Track,
    consistency,
    detection_factor_legacy,
    detection_factor_new,
    likelihood_ratio,
    predict,
    truncated_poisson_cap,
)


def ncv_motion(T=0.2, sigma_a=1.0, p_s=0.99, eta=1.1, tau=50.0) -> MotionModel:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = T
    G = np.vstack([T**2 / 2 * np.eye(2), T * np.eye(2)])
    return MotionModel(F=F, Q=sigma_a**2 * G @ G.T, T=T, survival_prob=p_s,
                       rate_forget=eta, extent_forget=tau)


def default_sensor(p_d=0.95) -> SensorModel:
    return SensorModel(
        H=np.hstack([np.eye(2), np.zeros((2, 2))]),
        R=np.eye(2),
        s=0.25,
        p_detect=p_d,
        clutter_rate=10.0,
        region_area=400.0 * 400.0,
    )


def make_track(p1=0.5, alpha=100.0, beta=10.0, nu=1000.0) -> Track:
    state = GgiwParams(
        GammaParams(alpha, beta),
        GaussianParams(np.array([1.0, -2.0, 3.0, 4.0]), np.diag([100.0, 100.0, 25.0, 25.0])),
        IWParams(nu, 994.0 * np.diag([64.0, 36.0])),
    )
    return Track(id=1, kind=LEGACY, p0=1.0 - p1, p1=p1, state=state)


class TestPredict:
    def test_existence(self):
        t = predict(make_track(p1=0.5), ncv_motion(p_s=0.99))
        assert t.p1 == pytest.approx(0.495)
        assert t.p0 == pytest.approx(0.505)
        assert t.p0 + t.p1 == 1.0

    def test_rate_mean_preserved(self):
        t = predict(make_track(alpha=100.0, beta=10.0), ncv_motion(eta=1.1))
        assert t.state.rate.alpha == pytest.approx(100.0 / 1.1)
        assert t.state.rate.beta == pytest.approx(10.0 / 1.1)
        assert gamma_mean(t.state.rate) == pytest.approx(10.0, rel=1e-12)

    def test_extent_mean_preserved(self):
        before = make_track(nu=1000.0)
        t = predict(before, ncv_motion(T=0.2, tau=50.0))
        np.testing.assert_allclose(
            extent_mean(t.state.ext), extent_mean(before.state.ext), rtol=1e-12
        )
        assert t.state.ext.dof < 1000.0

    def test_kinematics(self):
        m = ncv_motion()
        before = make_track()
        t = predict(before, m)
        np.testing.assert_allclose(t.state.kin.mean, m.F @ before.state.kin.mean)
        np.testing.assert_allclose(
            t.state.kin.cov, m.F @ before.state.kin.cov @ m.F.T + m.Q, rtol=1e-12
        )

    @given(
        p1=st.floats(0.0, 1.0),
        alpha=st.floats(0.5, 500.0),
        beta=st.floats(0.1, 50.0),
        nu=st.floats(7.5, 2000.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_moment_preservation_property(self, p1, alpha, beta, nu):
        t = Track(
            id=0,
            kind=LEGACY,
            p0=1.0 - p1,
            p1=p1,
            state=GgiwParams(
                GammaParams(alpha, beta),
                GaussianParams(np.zeros(4), np.eye(4)),
                IWParams(nu, np.diag([3.0, 7.0])),
            ),
        )
        out = predict(t, ncv_motion())
        assert out.p0 + out.p1 == 1.0
        assert gamma_mean(out.state.rate) == pytest.approx(gamma_mean(t.state.rate), rel=1e-12)
        np.testing.assert_allclose(
            extent_mean(out.state.ext), extent_mean(t.state.ext), rtol=1e-12
        )


class TestTruncatedPoissonCap:
    def test_small_rate(self):
        ell, c = truncated_poisson_cap(GammaParams(1.0, 100.0), 1e-5)
        assert ell == 2
        assert c == pytest.approx(1.0 / poisson.cdf(2, 0.01), rel=1e-12)

    def test_rate_ten(self):
        ell, c = truncated_poisson_cap(GammaParams(100.0, 10.0), 1e-5)
        # cumulative-sum oracle
        lam, k = 10.0, 0
        while poisson.sf(k, lam) > 1e-5:
            k += 1
        assert ell == k
        assert poisson.sf(ell, lam) <= 1e-5
        assert poisson.sf(ell - 1, lam) > 1e-5
        assert c * poisson.cdf(ell, lam) == pytest.approx(1.0, abs=1e-12)

    def test_loose_tolerance(self):
        ell, _ = truncated_poisson_cap(GammaParams(100.0, 10.0), 0.999)
        assert poisson.sf(ell, 10.0) <= 0.999
        assert ell == 1 or poisson.sf(ell - 1, 10.0) > 0.999

    @given(lam=st.floats(0.001, 40.0), tol=st.floats(1e-9, 0.5))
    @settings(max_examples=200, deadline=None)
    def test_minimality_and_normalization(self, lam, tol):
        ell, c = truncated_poisson_cap(GammaParams(lam, 1.0), tol)
        assert poisson.sf(ell, lam) <= tol
        if ell > 1:
            assert poisson.sf(ell - 1, lam) > tol
        assert c * poisson.cdf(ell, lam) == pytest.approx(1.0, abs=1e-12)


class TestLikelihoodRatio:
    def test_peak(self):
        s = SensorModel(
            H=np.hstack([np.eye(2), np.zeros((2, 2))]),
            R=0.5 * np.eye(2),
            s=0.25,
            p_detect=0.9,
            clutter_rate=1.0,
            region_area=2.0 * math.pi,
        )
        # sE + R = I with E = 2I
        xi = np.array([1.0, 2.0, 0.0, 0.0])
        val = likelihood_ratio([1.0, 2.0], xi, 2.0 * np.eye(2), s)
        assert val == pytest.approx(1.0, rel=1e-12)

    def test_gaussian_decay(self):
        s = SensorModel(
            H=np.hstack([np.eye(2), np.zeros((2, 2))]),
            R=0.5 * np.eye(2),
            s=0.25,
            p_detect=0.9,
            clutter_rate=1.0,
            region_area=2.0 * math.pi,
        )
        xi = np.zeros(4)
        peak = likelihood_ratio([0.0, 0.0], xi, 2.0 * np.eye(2), s)
        val = likelihood_ratio([2.0, 0.0], xi, 2.0 * np.eye(2), s)  # Mahalanobis^2 = 4
        assert val == pytest.approx(peak * math.exp(-2.0), rel=1e-12)

    def test_against_quadrature(self):
        # Independent check of the density value by numerically integrating the
        # Gaussian over a fine grid around the measurement (scenario parameters).
        sensor = default_sensor()
        xi = np.array([3.0, -1.0, 0.0, 0.0])
        ext = np.diag([64.0, 36.0])
        z = np.array([5.0, 1.0])
        cov = sensor.s * ext + sensor.R
        from scipy.stats import multivariate_normal

        want = multivariate_normal.pdf(z, mean=xi[:2], cov=cov) / sensor.clutter_density
        assert likelihood_ratio(z, xi, ext, sensor) == pytest.approx(want, rel=1e-10)


class TestDetectionFactors:
    def test_legacy_miss(self):
        assert detection_factor_legacy(0, 1.0, 0, 2, 1.0, 0.9) == 1.0
        assert detection_factor_legacy(0, 1.0, 2, 2, 1.0, 0.9) == 0.0

    def test_legacy_value(self):
        got = detection_factor_legacy(1, 1.0, 1, 2, 1.0, 0.9)
        assert got == pytest.approx(0.45 * math.exp(-1.0), rel=1e-12)

    def test_legacy_no_detection(self):
        got = detection_factor_legacy(1, 2.0, 0, 3, 1.5, 0.8)
        assert got == pytest.approx(1.5 * (0.2 + 0.8 * math.exp(-2.0)), rel=1e-12)

    def test_new_miss(self):
        assert detection_factor_new(0, 1.0, 0, 1, 1.0, 0.5) == 1.0
        assert detection_factor_new(0, 1.0, 1, 1, 1.0, 0.5) == 0.0

    def test_new_value(self):
        got = detection_factor_new(1, 1.0, 1, 1, 1.0, 0.5)
        want = 0.5 * math.exp(-1.0) / ((0.5 + 0.5 * math.exp(-1.0)) * 1.0)
        assert got == pytest.approx(want, rel=1e-12)


class TestConsistency:
    def test_matched(self):
        assert consistency(3, (1, 0), track=1, slot=0, meas=3) == 1

    def test_contradiction_wrong_slot(self):
        assert consistency(3, (1, 1), track=1, slot=0, meas=3) == 0

    def test_contradiction_unclaimed(self):
        assert consistency(2, (1, 0), track=1, slot=0, meas=3) == 0

    def test_clutter_ok(self):
        assert consistency(0, (0, 0), track=1, slot=0, meas=3) == 1
