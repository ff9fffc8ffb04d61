"""Limit-law simulators: null exp-average law, sup law, local-alternative
drift, and the importance-weighted CDF of the random-alternative limit."""

import math

import numpy as np
import pytest
from scipy import stats as sps

from expavg.core import ZetaPrior, make_uniform_prior, point_prior
from expavg.errors import KernelError
from expavg.gausscp import g_efficient_score, g_simulate, GaussCPParams
from expavg.limitlaw import (
    CovKernel,
    gauss_reference_kernel,
    kernel_from_scores,
    rchi_cdf,
    simulate_echi,
    simulate_fchi,
    simulate_supchi,
)
from expavg.stats import ExpAvgConfig


def point_kernel_p2():
    """Single-threshold kernel with identity information, p = 2."""
    return CovKernel(np.array([0.5]), np.eye(2), np.eye(2)[None], 2)


class TestEchi:
    def test_point_prior_chi2_quantile_mapping(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        samples = simulate_echi(kernel, prior, ExpAvgConfig(1.0, 2), 10**6, seed=1)
        q95 = float(np.quantile(samples.values, 0.95))
        target = 0.5 * math.exp(0.25 * sps.chi2(2).ppf(0.95))
        assert target == pytest.approx(2.2362, abs=5e-4)
        assert abs(q95 - target) / target <= 0.01

    def test_c_zero_is_average_quadratic(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        samples = simulate_echi(kernel, prior, ExpAvgConfig(0.0, 2), 10**5, seed=2)
        # at c=0 the functional is the plain average, here a chi-square(2)
        assert samples.values.mean() == pytest.approx(2.0, abs=0.05)
        # the exact exp-average formula itself degenerates to 1 at c=0
        from expavg.core import StatCurve
        from expavg.stats import exp_average

        val = (1 + 0) ** (-1.0) * 1.0
        assert val == 1.0

    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    def test_mean_one_point_prior(self, c):
        kernel = point_kernel_p2()
        samples = simulate_echi(kernel, point_prior(0.5), ExpAvgConfig(c, 2), 10**5, seed=3)
        v = samples.values
        se = v.std() / math.sqrt(v.size)
        assert abs(v.mean() - 1.0) <= 3 * se

    @pytest.mark.parametrize("c", [0.5, 1.0])
    def test_mean_one_uniform_prior(self, c):
        zetas = make_uniform_prior(0.05, 0.95, 10).points
        kernel = gauss_reference_kernel(zetas)
        prior = ZetaPrior(zetas, np.full(10, 0.1))
        samples = simulate_echi(kernel, prior, ExpAvgConfig(c, 1), 10**5, seed=4)
        v = samples.values
        se = v.std() / math.sqrt(v.size)
        assert abs(v.mean() - 1.0) <= 3 * se

    def test_batching_invariance(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        cfg = ExpAvgConfig(1.0, 2)
        a = simulate_echi(kernel, prior, cfg, 50000, seed=5)
        b = simulate_echi(kernel, prior, cfg, 70000, seed=5)
        assert np.array_equal(a.values, b.values[:50000])

    def test_non_psd_kernel_raises(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        zetas = np.array([0.3, 0.7])
        kernel = CovKernel(zetas, bad, np.array([[[1.0]], [[1.0]]]), 1)
        with pytest.raises(KernelError):
            simulate_echi(kernel, ZetaPrior(zetas, np.array([0.5, 0.5])), ExpAvgConfig(1.0, 1), 10, seed=6)


class TestSupChi:
    def test_single_point_is_chi2(self):
        kernel = point_kernel_p2()
        samples = simulate_supchi(kernel, point_prior(0.5), 10**5, seed=7)
        ks = sps.kstest(samples.values, sps.chi2(2).cdf).statistic
        assert ks <= 0.01

    def test_finer_grid_dominates(self):
        zetas19 = make_uniform_prior(0.05, 0.95, 19).points
        kernel = gauss_reference_kernel(zetas19)
        prior19 = ZetaPrior(zetas19, np.full(19, 1 / 19))
        sub = zetas19[::2]  # 10-point subset
        kernel_sub = gauss_reference_kernel(sub)
        prior_sub = ZetaPrior(sub, np.full(10, 0.1))
        q19 = np.quantile(simulate_supchi(kernel, prior19, 10**5, seed=8).values, 0.95)
        qsub = np.quantile(simulate_supchi(kernel_sub, prior_sub, 10**5, seed=8).values, 0.95)
        assert q19 >= qsub - 0.05

    def test_quantile_reproducible_across_seeds(self):
        zetas = make_uniform_prior(0.05, 0.95, 19).points
        kernel = gauss_reference_kernel(zetas)
        prior = ZetaPrior(zetas, np.full(19, 1 / 19))
        qa = np.quantile(simulate_supchi(kernel, prior, 10**5, seed=9).values, 0.95)
        qb = np.quantile(simulate_supchi(kernel, prior, 10**5, seed=10).values, 0.95)
        assert abs(qa - qb) / qa <= 0.01


class TestFchi:
    def test_zero_drift_matches_echi(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        cfg = ExpAvgConfig(1.0, 2)
        a = simulate_echi(kernel, prior, cfg, 20000, seed=11)
        b = simulate_fchi(kernel, prior, cfg, np.zeros(2), 0.5, 20000, seed=11)
        assert np.array_equal(a.values, b.values)

    def test_noncentral_mean(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        h = np.array([1.2, -0.7])
        lam = float(h @ np.eye(2) @ h)  # noncentrality with identity info
        samples = simulate_fchi(
            kernel, prior, ExpAvgConfig(0.0, 2), h, 0.5, 10**5, seed=12
        )
        v = samples.values
        se = v.std() / math.sqrt(v.size)
        assert abs(v.mean() - (2.0 + lam)) <= 3 * se

    def test_drift_at_alternative_point_is_info_times_h(self):
        zetas = make_uniform_prior(0.05, 0.95, 5).points
        kernel = gauss_reference_kernel(zetas)
        h = np.array([0.8])
        j = 2
        drift = kernel.Sigma[j, j] * h[0]
        assert drift == pytest.approx(kernel.info[j, 0, 0] * h[0])

    def test_snapping_warns(self):
        kernel = point_kernel_p2()
        prior = point_prior(0.5)
        with pytest.warns(UserWarning, match="snapped"):
            simulate_fchi(
                kernel, prior, ExpAvgConfig(1.0, 2), np.zeros(2), 0.51, 100, seed=13
            )


class TestRchiCdf:
    def _samples(self):
        kernel = point_kernel_p2()
        return simulate_echi(kernel, point_prior(0.5), ExpAvgConfig(1.0, 2), 10**5, seed=14)

    def test_below_min_zero(self):
        s = self._samples()
        assert rchi_cdf(s, float(s.values.min()) - 1.0) == 0.0

    def test_above_max_is_mean(self):
        s = self._samples()
        top = rchi_cdf(s, float(s.values.max()) + 1.0)
        assert top == pytest.approx(s.values.mean())
        assert abs(top - 1.0) <= 0.05

    def test_monotone(self):
        s = self._samples()
        grid = np.linspace(0, 5, 41)
        vals = [rchi_cdf(s, t) for t in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_right_tail_dominance(self):
        # past the median, the reweighted law has more mass above t
        s = self._samples()
        med = float(np.median(s.values))
        for t in np.linspace(med, float(np.quantile(s.values, 0.99)), 8):
            ecdf = float(np.mean(s.values <= t))
            assert rchi_cdf(s, t) <= ecdf + 1e-12


class TestKernelBuilders:
    def test_empirical_matches_analytic(self):
        n = 10**5
        ds = g_simulate(n, GaussCPParams(0, 0, 1, 0.5), seed=15)
        zetas = np.array([0.2, 0.5, 0.8])
        scores = np.stack([g_efficient_score(ds, z, 0.0, 1.0) for z in zetas])[:, :, None]
        emp = kernel_from_scores(zetas, scores)
        ana = gauss_reference_kernel(zetas)
        assert np.abs(emp.Sigma - ana.Sigma).max() <= 0.02
        assert emp.p == 1

    def test_diag_blocks_equal_info(self):
        zetas = np.array([0.3, 0.6])
        kernel = gauss_reference_kernel(zetas, sigma=2.0)
        for g, z in enumerate(zetas):
            assert kernel.info[g, 0, 0] == pytest.approx(z * (1 - z) / 4.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            CovKernel(np.array([0.5]), np.eye(2), 2 * np.eye(2)[None], 2)
