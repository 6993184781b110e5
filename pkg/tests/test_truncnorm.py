import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from retailsim.truncnorm import (sample_trunc_normal, sample_trunc_normal_from_uniform,
                                 trunc_normal_logpdf, trunc_normal_mean, trunc_normal_var)


def quad_mean(mu, sigma):
    """Truncated mean by direct quadrature of the unnormalised density."""
    lo = max(0.0, mu - 40 * sigma)
    f = lambda q: np.exp(-0.5 * ((q - mu) / sigma) ** 2)
    upper = max(mu, 0.0) + 40 * sigma
    mass = integrate.quad(f, lo, upper, epsabs=0, epsrel=1e-12, limit=200)[0]
    first = integrate.quad(lambda q: q * f(q), lo, upper, epsabs=0, epsrel=1e-12, limit=200)[0]
    return first / mass


class TestLogpdf:
    def test_half_normal_at_zero(self):
        assert trunc_normal_logpdf(0.0, 0.0, 1.0) == pytest.approx(np.log(2 / np.sqrt(2 * np.pi)),
                                                                   abs=1e-14)
        assert trunc_normal_logpdf(0.0, 0.0, 1.0) == pytest.approx(-0.2258, abs=1e-4)

    def test_far_from_boundary(self):
        assert trunc_normal_logpdf(5.0, 5.0, 1.0) == pytest.approx(-0.9189, abs=1e-4)

    def test_deep_tail_matches_quadrature(self):
        mu, sigma, q = -10.0, 1.0, 0.1
        # normalise with the integral of exp(-(x-mu)^2/2) over [0, inf) done in shifted form
        f = lambda x: np.exp(-0.5 * ((x - mu) ** 2 - mu ** 2))
        mass = integrate.quad(f, 0, 5, epsabs=0, epsrel=1e-13)[0]
        log_ref = -0.5 * ((q - mu) ** 2 - mu ** 2) - np.log(mass)
        assert trunc_normal_logpdf(q, mu, sigma) == pytest.approx(log_ref, rel=1e-10)

    def test_negative_support(self):
        assert trunc_normal_logpdf(-0.1, 1.0, 1.0) == -np.inf

    @given(st.floats(0, 50), st.floats(-30, 30), st.floats(0.05, 20))
    def test_matches_scipy(self, q, mu, sigma):
        ref = stats.truncnorm.logpdf(q, -mu / sigma, np.inf, loc=mu, scale=sigma)
        assert trunc_normal_logpdf(q, mu, sigma) == pytest.approx(ref, rel=1e-8, abs=1e-8)

    @pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (-3.0, 1.0), (2.0, 0.5), (-8.0, 2.0)])
    def test_integrates_to_one(self, mu, sigma):
        upper = max(mu, 0) + 40 * sigma
        mass = integrate.quad(lambda q: np.exp(trunc_normal_logpdf(q, mu, sigma)), 0, upper,
                              epsabs=0, epsrel=1e-12, limit=200)[0]
        assert mass == pytest.approx(1.0, abs=1e-9)


class TestMoments:
    @pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (-3.0, 1.0), (4.0, 2.0), (-20.0, 1.0)])
    def test_mean_matches_quadrature(self, mu, sigma):
        assert trunc_normal_mean(mu, sigma) == pytest.approx(quad_mean(mu, sigma), rel=1e-8)

    @given(st.floats(-30, 30), st.floats(0.05, 20))
    def test_mean_and_var_match_scipy(self, mu, sigma):
        d = stats.truncnorm(-mu / sigma, np.inf, loc=mu, scale=sigma)
        assert trunc_normal_mean(mu, sigma) == pytest.approx(d.mean(), rel=1e-7, abs=1e-9)
        assert trunc_normal_var(mu, sigma) == pytest.approx(d.var(), rel=1e-5, abs=1e-9)


class TestSampler:
    def test_half_normal_mean(self):
        x = sample_trunc_normal(0.0, 1.0, np.random.default_rng(0), size=10**6)
        assert abs(x.mean() - np.sqrt(2 / np.pi)) < 0.01

    def test_untruncated_limit(self):
        x = sample_trunc_normal(100.0, 1.0, np.random.default_rng(1), size=10**5)
        assert abs(x.mean() - 100.0) < 0.05

    def test_negative_location_matches_quadrature(self):
        x = sample_trunc_normal(-3.0, 1.0, np.random.default_rng(2), size=10**6)
        assert x.mean() == pytest.approx(quad_mean(-3.0, 1.0), rel=0.01)

    @pytest.mark.parametrize("mu", [-2.0, -7.0, -30.0])
    def test_distribution_ks(self, mu):
        x = sample_trunc_normal(mu, 1.0, np.random.default_rng(3), size=20000)
        d = stats.truncnorm(-mu, np.inf, loc=mu, scale=1.0)
        assert stats.kstest(x, d.cdf).pvalue > 1e-3

    def test_non_negative_and_broadcast(self):
        mu = np.array([[-50.0, 0.0, 3.0]])
        x = sample_trunc_normal(mu, np.array([1.0, 2.0, 0.5]), np.random.default_rng(4))
        assert x.shape == (1, 3) and np.all(x >= 0)

    def test_seeded_determinism(self):
        a = sample_trunc_normal(1.0, 2.0, np.random.default_rng(9), size=50)
        b = sample_trunc_normal(1.0, 2.0, np.random.default_rng(9), size=50)
        assert a.tobytes() == b.tobytes()

    def test_from_uniform_is_inverse_cdf(self):
        u = np.linspace(0.01, 0.99, 25)
        for mu in (-4.0, 0.0, 2.5):
            d = stats.truncnorm(-mu / 1.5, np.inf, loc=mu, scale=1.5)
            np.testing.assert_allclose(sample_trunc_normal_from_uniform(mu, 1.5, u), d.ppf(u),
                                       rtol=1e-8, atol=1e-10)

    @given(st.floats(0.0, 0.999999), st.floats(-100, 100), st.floats(0.01, 10))
    def test_from_uniform_non_negative_monotone(self, u, mu, sigma):
        a = sample_trunc_normal_from_uniform(mu, sigma, u)
        b = sample_trunc_normal_from_uniform(mu, sigma, min(u + 1e-4, 0.9999999))
        assert 0.0 <= a <= b + 1e-12
