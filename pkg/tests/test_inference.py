import numpy as np
import pytest
from scipy import stats

from retailsim.features import DesignMatrix, feature_matrix
from retailsim.inference import (Metric, NutsConfig, OptimizationError, PhasePoint,
                                 PosteriorDraws, advi_fit, diagnostics, ess_bulk, ess_mean,
                                 leapfrog, load_posterior, map_estimate, mcse_mean, nuts_sample,
                                 predict_revenue, rhat, save_posterior)
from retailsim.inference.adaptation import DualAveraging, WelfordEstimator, adaptation_windows
from retailsim.inference.diagnostics import _rhat_raw, split_chains
from retailsim.inference.hmc import as_target
from retailsim.model import Hyperparams, ParamLayout, sample_prior, with_params


class Gaussian:
    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, float)
        self.prec = np.linalg.inv(cov)

    def logp_and_grad(self, x):
        r = x - self.mean
        g = -self.prec @ r
        return 0.5 * float(r @ g), g


class TestHmc:
    def test_leapfrog_reversible_and_energy_stable(self):
        target = Gaussian([1.0, -2.0], [[1.0, 0.5], [0.5, 2.0]])
        metric = Metric(np.array([1.0, 2.0]))
        lp, g = target.logp_and_grad(np.zeros(2))
        z0 = PhasePoint(np.zeros(2), np.array([0.3, -0.7]), lp, g)
        z = z0
        for _ in range(20):
            z = leapfrog(target, metric, z, 0.1)
        assert abs(z.energy(metric) - z0.energy(metric)) < 0.01
        back = PhasePoint(z.theta, -z.p, z.logp, z.grad)
        for _ in range(20):
            back = leapfrog(target, metric, back, 0.1)
        np.testing.assert_allclose(back.theta, z0.theta, atol=1e-12)
        np.testing.assert_allclose(-back.p, z0.p, atol=1e-12)

    def test_dense_momentum_covariance(self):
        inv = np.array([[2.0, 0.6], [0.6, 1.0]])
        m = Metric(inv)
        rng = np.random.default_rng(0)
        p = np.array([m.sample_momentum(rng) for _ in range(40000)])
        np.testing.assert_allclose(np.cov(p.T), np.linalg.inv(inv), rtol=0.05, atol=0.02)

    def test_callable_target(self):
        t = as_target(lambda x: -0.5 * x @ x, lambda x: -x)
        lp, g = t.logp_and_grad(np.array([1.0, 2.0]))
        assert lp == -2.5 and np.array_equal(g, [-1.0, -2.0])


class TestNuts:
    def test_correlated_gaussian(self):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        target = Gaussian([1.0, -1.0], cov)
        d = nuts_sample(target, init=np.zeros(2), tune=500, draws=1000, chains=4, seed=1)
        x = d.flat
        for i in range(2):
            assert abs(x[:, i].mean() - target.mean[i]) < 3 * mcse_mean(d.samples[:, :, i])
            assert rhat(d.samples[:, :, i]) < 1.01
        np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.1, atol=0.05)
        assert not d.failed

    def test_truncated_normal_on_log_scale(self):
        # q ~ TN(-1, 1) on [0, inf), sampled as u = log q with the Jacobian
        def lp(u):
            q = np.exp(u[0])
            return -0.5 * (q + 1.0) ** 2 + u[0]

        def gr(u):
            q = np.exp(u[0])
            return np.array([-(q + 1.0) * q + 1.0])

        d = nuts_sample(lp, gr, init=np.zeros(1), tune=1000, draws=6000, chains=4, seed=2)
        q = np.exp(d.samples[:, :, 0])
        step = max(1, int(round(q.size / ess_mean(q))))
        thin = q[:, ::step].ravel()
        ref = stats.truncnorm(1.0, np.inf, loc=-1.0, scale=1.0)
        assert stats.kstest(thin, ref.cdf).statistic < 0.02 + 1.36 / np.sqrt(thin.size)
        assert stats.kstest(q.ravel(), ref.cdf).statistic < 0.02

    def test_conjugate_normal_mean(self):
        rng = np.random.default_rng(3)
        y = rng.normal(2.0, 1.0, 20)
        prior_sd = 10.0
        post_prec = 1 / prior_sd**2 + y.size
        post_mean = y.sum() / post_prec
        d = nuts_sample(lambda t: -0.5 * t @ t / prior_sd**2 - 0.5 * np.sum((y - t[0]) ** 2),
                        lambda t: np.array([-t[0] / prior_sd**2 + np.sum(y - t[0])]),
                        init=np.zeros(1), tune=500, draws=2000, chains=4, seed=4)
        assert d.flat[:, 0].mean() == pytest.approx(post_mean, rel=0.02)
        assert d.flat[:, 0].std() == pytest.approx(1 / np.sqrt(post_prec), rel=0.05)

    def test_seeded_determinism_and_threads(self):
        target = Gaussian([0.0, 0.0], np.eye(2))
        a = nuts_sample(target, init=np.zeros(2), tune=100, draws=50, chains=2, seed=7)
        b = nuts_sample(target, init=np.zeros(2), tune=100, draws=50, chains=2, seed=7, threads=2)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_dense_metric_learns_covariance(self):
        cov = np.array([[4.0, 1.9], [1.9, 1.0]])
        d = nuts_sample(Gaussian([0, 0], cov), init=np.zeros(2), tune=1000, draws=10,
                        chains=1, metric="dense", seed=5)
        np.testing.assert_allclose(d.inv_metric[0], cov, rtol=0.3, atol=0.2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NutsConfig(target_accept=1.0)
        with pytest.raises(ValueError):
            NutsConfig(metric="full")
        with pytest.raises(ValueError):
            nuts_sample(Gaussian([0], [[1]]), init=None)


class TestAdaptation:
    def test_dual_averaging_hits_target(self):
        # acceptance exp(-eps) equals 0.8 at eps = -log(0.8)
        da = DualAveraging(1.0, target_accept=0.8)
        eps = 1.0
        for _ in range(3000):
            eps = da.update(np.exp(-eps))
        assert da.final_step_size == pytest.approx(-np.log(0.8), rel=0.02)

    def test_windows_default(self):
        assert adaptation_windows(1000) == [(75, 100), (100, 150), (150, 250), (250, 450), (450, 950)]

    def test_windows_short(self):
        assert adaptation_windows(100) == [(15, 90)]
        assert adaptation_windows(10) == []

    @pytest.mark.parametrize("dense", [True, False])
    def test_welford_matches_numpy(self, dense):
        x = np.random.default_rng(0).normal(size=(500, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0, 0.3, 2]])
        w = WelfordEstimator(3, dense)
        for row in x:
            w.add(row)
        np.testing.assert_allclose(w.mean, x.mean(0), atol=1e-12)
        ref = np.cov(x.T) if dense else x.var(0, ddof=1)
        np.testing.assert_allclose(w.m2 / (w.n - 1), ref, atol=1e-10)
        n = 500
        expect = n / (n + 5) * ref + 1e-3 * 5 / (n + 5) * (np.eye(3) if dense else 1)
        np.testing.assert_allclose(w.regularized(), expect, atol=1e-12)


class TestDiagnostics:
    def test_identical_chains_closed_form(self):
        x = np.random.default_rng(0).normal(size=200)
        chains = np.stack([x, x, x])
        assert _rhat_raw(chains) == pytest.approx(np.sqrt(199 / 200), rel=1e-12)

    def test_converged_and_shifted_chains(self):
        rng = np.random.default_rng(1)
        good = rng.normal(size=(4, 1000))
        assert rhat(good) < 1.01
        bad = good + np.arange(4)[:, None]
        assert rhat(bad) > 1.5

    def test_rhat_single_chain_nan(self):
        assert np.isnan(rhat(np.zeros(10)))

    def test_split_chains(self):
        x = np.arange(11.0)[None, :]
        np.testing.assert_array_equal(split_chains(x), [[0, 1, 2, 3, 4], [6, 7, 8, 9, 10]])

    def test_ess_iid_and_ar1(self):
        rng = np.random.default_rng(2)
        iid = rng.normal(size=(4, 5000))
        assert ess_bulk(iid) == pytest.approx(20000, rel=0.1)
        phi = 0.8
        ar = np.zeros((4, 20000))
        e = rng.normal(size=ar.shape)
        for t in range(1, ar.shape[1]):
            ar[:, t] = phi * ar[:, t - 1] + e[:, t]
        expect = ar.size * (1 - phi) / (1 + phi)
        assert ess_mean(ar) == pytest.approx(expect, rel=0.15)

    def test_diagnostics_dict(self):
        s = np.random.default_rng(3).normal(size=(2, 100, 2))
        d = diagnostics(s, ["a", "b"])
        assert set(d) == {"a", "b"} and d["a"]["rhat"] is not None
        one = diagnostics(s[:1])
        assert one["theta[0]"]["rhat"] is None


class TestOptimize:
    def test_map_on_gaussian(self):
        target = Gaussian([3.0, -1.0, 0.5], np.diag([1.0, 4.0, 0.25]))
        res = map_estimate(target, init=np.zeros(3))
        assert res.converged
        np.testing.assert_allclose(res.theta, target.mean, atol=1e-6)

    def test_map_non_finite_start(self):
        with pytest.raises(OptimizationError):
            map_estimate(lambda x: -np.inf, lambda x: np.zeros(1), init=np.zeros(1))

    def test_advi_on_gaussian(self):
        sd = np.array([0.5, 2.0])
        target = Gaussian([1.0, -3.0], np.diag(sd**2))
        res = advi_fit(target, init=np.zeros(2), iterations=20000, step_size=0.1, seed=0)
        np.testing.assert_allclose(res.mean, target.mean, atol=0.15)
        np.testing.assert_allclose(res.std, sd, rtol=0.15)


class TestDraws:
    def make(self):
        rng = np.random.default_rng(0)
        return PosteriorDraws(rng.normal(size=(2, 30, 3)), ["a", "b", "c"],
                              {"divergent": np.zeros((2, 30))}, np.array([0.1, 0.2]),
                              np.ones((2, 3)), False, {"method": "nuts"})

    def test_round_trip(self, tmp_path):
        d = self.make()
        save_posterior(tmp_path / "p.bin", d, {"seed": 3})
        e, meta = load_posterior(tmp_path / "p.bin")
        assert e.samples.tobytes() == d.samples.tobytes()
        assert e.names == d.names and meta["seed"] == 3 and e.info == d.info
        np.testing.assert_array_equal(e.sampler_stats["divergent"], d.sampler_stats["divergent"])

    def test_bad_files(self, tmp_path):
        d = self.make()
        path = tmp_path / "p.bin"
        save_posterior(path, d)
        raw = path.read_bytes()
        (tmp_path / "bad").write_bytes(b"XXXXXXXX" + raw[8:])
        (tmp_path / "ver").write_bytes(raw[:6] + b"\x00\x09" + raw[8:])
        (tmp_path / "cut").write_bytes(raw[:-16])
        for name in ("bad", "ver", "cut"):
            with pytest.raises(ValueError):
                load_posterior(tmp_path / name)

    def test_thinning_and_validation(self):
        d = self.make()
        assert d.thinned(10).shape == (10, 3)
        assert d.thinned(1000).shape == (60, 3)
        np.testing.assert_array_equal(d.thinned(2), d.flat[[0, 59]])
        with pytest.raises(ValueError):
            PosteriorDraws(np.full((1, 2, 1), np.nan))


class TestPredict:
    def test_near_deterministic_prediction(self):
        n, k = 2, 2
        h = Hyperparams(n, k)
        p = with_params(sample_prior(h, np.random.default_rng(0)), sigma_q=1e-6,
                        w_t=np.full(7, 5.0), w_r=np.array([1.0, 2.0]), w_p=np.array([0.0, 3.0]),
                        b=1.0, w_s=0.5)
        day = np.array([0, 0, 1, 1])
        reg = np.array([0, 1, 0, 1])
        prod = np.array([0, 1, 1, 0])
        xs = np.array([0.0, 1.0, 2.0, -1.0])
        X = feature_matrix(day % 7, reg, prod, xs, n, k)
        price = np.array([2.0, 1.0, 3.0, 1.5])
        dm = DesignMatrix(X, np.zeros(4), day, reg, prod, price, np.zeros(4), n, k)
        loc = 5.0 + np.array([1, 2, 1, 2]) + np.array([0, 3, 3, 0]) + 0.5 * xs + 1.0
        out = predict_revenue([p] * 20, dm, ParamLayout(n, k), seed=0)
        np.testing.assert_allclose(out.mean, loc * price, atol=1e-4)
        np.testing.assert_allclose(out.daily_mean, [loc[:2] @ price[:2], loc[2:] @ price[2:]], atol=1e-4)
        assert np.all(out.lower <= out.mean + 1e-9) and np.all(out.mean <= out.upper + 1e-9)

    def test_dimension_mismatch(self):
        dm = DesignMatrix(np.zeros((0, 12)), np.zeros(0), np.zeros(0, int), np.zeros(0, int),
                          np.zeros(0, int), np.zeros(0), np.zeros(0), 2, 2)
        with pytest.raises(ValueError):
            predict_revenue([], dm, ParamLayout(3, 2))
