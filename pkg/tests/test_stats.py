"""Statistic curves and the exp-average / sup functionals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expavg.core import StatCurve, ZetaPrior, make_uniform_prior, point_prior
from expavg.errors import AlignmentError, OptimizerInconsistencyError
from expavg.stats import (
    ExpAvgConfig,
    VarianceSource,
    exp_average,
    expavg_rows,
    lr_stat_curve,
    score_stat_curve,
    sup_stat,
    wald_stat_curve,
)


def _curve_strategy(max_value=20.0):
    return st.lists(st.floats(0, max_value), min_size=1, max_size=25).map(
        lambda v: StatCurve(np.asarray(v))
    )


class TestScoreCurve:
    def test_zero_means(self):
        vs = VarianceSource("outer_product", np.eye(2)[None].repeat(3, axis=0))
        curve = score_stat_curve(np.zeros((3, 2)), vs, 100)
        assert np.allclose(curve.values, 0.0)

    def test_scalar_formula(self):
        vs = VarianceSource("outer_product", np.full((1, 1, 1), 2.0))
        curve = score_stat_curve(np.array([[0.3]]), vs, 50)
        assert np.isclose(curve.values[0], 50 * 0.3**2 / 2.0)

    def test_alignment_error(self):
        vs = VarianceSource("outer_product", np.eye(2)[None].repeat(3, axis=0))
        with pytest.raises(AlignmentError):
            score_stat_curve(np.zeros((4, 2)), vs, 100)


class TestWaldCurve:
    def test_zero_at_null(self):
        infos = np.eye(2)[None].repeat(4, axis=0)
        curve = wald_stat_curve(np.zeros((4, 2)), np.zeros(2), infos, 100)
        assert np.allclose(curve.values, 0.0)

    def test_scalar_formula(self):
        infos = np.full((1, 1, 1), 0.25)
        curve = wald_stat_curve(np.array([[0.5]]), np.array([0.0]), infos, 400)
        assert np.isclose(curve.values[0], 400 * 0.25 * 0.25)


class TestLrCurve:
    def test_equal_logliks(self):
        assert lr_stat_curve(-10.0, [-10.0, -10.0]).values.tolist() == [0.0, 0.0]

    def test_formula(self):
        assert np.isclose(lr_stat_curve(-10.0, [-8.0]).values[0], 4.0)

    def test_inconsistency_raises(self):
        with pytest.raises(OptimizerInconsistencyError):
            lr_stat_curve(-10.0, [-10.1])

    def test_tiny_violation_clamped(self):
        assert lr_stat_curve(-10.0, [-10.0000005]).values[0] == 0.0


class TestExpAverage:
    def test_zero_curve_p2_c1(self):
        prior = make_uniform_prior(0, 1, 4)
        val = exp_average(StatCurve(np.zeros(4)), prior, ExpAvgConfig(1.0, 2))
        assert np.isclose(val, 0.5)

    def test_point_prior_closed_form(self):
        cfg = ExpAvgConfig(3.0, 2)
        val = exp_average(StatCurve(np.array([5.0])), point_prior(0.3), cfg)
        expected = (1 + 3.0) ** (-1.0) * math.exp(0.5 * 0.75 * 5.0)
        assert np.isclose(val, expected)

    def test_two_point_oracle(self):
        # direct summation: 0.25 * (e^0.25 + e^1.0)
        prior = ZetaPrior(np.array([0.2, 0.8]), np.array([0.5, 0.5]))
        val = exp_average(StatCurve(np.array([1.0, 4.0])), prior, ExpAvgConfig(1.0, 2))
        expected = 0.25 * (math.exp(0.25) + math.exp(1.0))
        assert np.isclose(val, expected)
        assert abs(expected - 1.000577) < 1e-6

    def test_c_zero_is_average(self):
        prior = ZetaPrior(np.array([0.2, 0.8]), np.array([0.25, 0.75]))
        val = exp_average(StatCurve(np.array([2.0, 4.0])), prior, ExpAvgConfig(0.0, 2))
        assert np.isclose(val, 0.25 * 2 + 0.75 * 4)

    def test_c_infinity_log_form(self):
        prior = ZetaPrior(np.array([0.2, 0.8]), np.array([0.5, 0.5]))
        val = exp_average(
            StatCurve(np.array([2.0, 6.0])), prior, ExpAvgConfig(math.inf, 2)
        )
        expected = math.log(0.5 * math.exp(1.0) + 0.5 * math.exp(3.0))
        assert np.isclose(val, expected)

    def test_overflow_safety_c_inf(self):
        prior = make_uniform_prior(0, 1, 3)
        val = exp_average(
            StatCurve(np.array([700.0, 650.0, 600.0])), prior, ExpAvgConfig(math.inf, 2)
        )
        assert np.isfinite(val)
        assert val == pytest.approx(350.0 + math.log(1 / 3), rel=1e-6)

    def test_infeasible_atom_dropped(self):
        prior = make_uniform_prior(0, 1, 2)
        cfg = ExpAvgConfig(0.0, 1)
        with pytest.warns(UserWarning):
            val = exp_average(
                StatCurve(np.array([float("-inf"), 3.0])), prior, cfg
            )
        assert np.isclose(val, 3.0)

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            exp_average(StatCurve(np.zeros(3)), make_uniform_prior(0, 1, 2), ExpAvgConfig(1, 1))

    @given(curve=_curve_strategy(), c=st.sampled_from([0.0, 0.5, 1.0, 3.0, math.inf]))
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_curve(self, curve, c):
        G = curve.size
        prior = make_uniform_prior(0, 1, G)
        cfg = ExpAvgConfig(c, 2)
        base = exp_average(curve, prior, cfg)
        bumped = StatCurve(curve.values + np.eye(G)[0] * 0.7)
        assert exp_average(bumped, prior, cfg) >= base - 1e-12

    @given(curve=_curve_strategy(), c=st.sampled_from([0.0, 1.0, math.inf]))
    @settings(max_examples=50, deadline=None)
    def test_relabeling_invariance(self, curve, c):
        G = curve.size
        rng = np.random.default_rng(0)
        perm = rng.permutation(G)
        pts = np.linspace(0.1, 0.9, G)
        w = np.arange(1.0, G + 1)
        w /= w.sum()
        prior = ZetaPrior(pts, w)
        # permuting (weights, curve) jointly: reorder weights back to sorted points
        w_p = w[perm]
        v_p = curve.values[perm]
        prior_p = ZetaPrior(pts, w_p / w_p.sum())
        cfg = ExpAvgConfig(c, 2)
        a = exp_average(curve, prior, cfg)
        b = exp_average(StatCurve(v_p), prior_p, cfg)
        assert np.isclose(a, b, rtol=1e-12, atol=1e-12)

    @given(curve=_curve_strategy(max_value=20.0))
    @settings(max_examples=60, deadline=None)
    def test_small_c_limits(self, curve):
        # Taylor expansion of the functional at small c; the residual is
        # O(c * integral s^2), about 1e-2 for curves bounded by 20
        G = curve.size
        prior = make_uniform_prior(0, 1, G)
        c = 1e-4
        p = 2
        avg = float(np.dot(prior.weights, curve.values))
        ea = exp_average(curve, prior, ExpAvgConfig(c, p))
        lhs1 = 2 * ((1 + c) ** (p / 2) * ea - 1) / c
        assert abs(lhs1 - avg) < 1e-2
        lhs2 = 2 * (ea - 1) / c
        assert abs(lhs2 - (avg - p)) < 1e-2

    @given(curve=_curve_strategy(), c=st.sampled_from([0.5, 1.0, 3.0]))
    @settings(max_examples=100, deadline=None)
    def test_sup_bounds_exp_average(self, curve, c):
        G = curve.size
        prior = make_uniform_prior(0, 1, G)
        cfg = ExpAvgConfig(c, 2)
        ea = exp_average(curve, prior, cfg)
        sup, _ = sup_stat(curve)
        bound = (1 + c) ** (-1.0) * math.exp(0.5 * c / (1 + c) * sup)
        assert ea <= bound + 1e-12


class TestSup:
    def test_constant_curve(self):
        assert sup_stat(StatCurve(np.full(5, 2.0))) == (2.0, 0)

    def test_first_argmax(self):
        assert sup_stat(StatCurve(np.array([1.0, 3.0, 2.0]))) == (3.0, 1)

    def test_ties_take_first(self):
        assert sup_stat(StatCurve(np.array([1.0, 3.0, 3.0]))) == (3.0, 1)


class TestExpavgRows:
    def test_matches_scalar_path(self):
        rng = np.random.default_rng(3)
        quads = rng.uniform(0, 5, (7, 4))
        prior = make_uniform_prior(0, 1, 4)
        cfg = ExpAvgConfig(1.0, 2)
        rows = expavg_rows(quads, prior.weights, cfg)
        for i in range(7):
            single = exp_average(StatCurve(quads[i]), prior, cfg)
            assert np.isclose(rows[i], single)

    def test_nan_atoms_renormalized(self):
        quads = np.array([[1.0, np.nan, 3.0]])
        w = np.array([0.2, 0.5, 0.3])
        rows = expavg_rows(quads, w, ExpAvgConfig(0.0, 1))
        assert np.isclose(rows[0], (0.2 * 1 + 0.3 * 3) / 0.5)
