"""Welch two-sample t-test against hand values, scipy and a calibration property."""
import math

import numpy as np
import pytest
from scipy import stats as sps

from serboost.stats import student_t_sf2, welch_ttest


class TestWelch:
    def test_identical(self):
        r = welch_ttest([0.9, 0.92, 0.95], [0.9, 0.92, 0.95])
        assert r.t == 0.0 and r.p == 1.0 and not r.significant

    def test_hand_example(self):
        r = welch_ttest([2.1, 2.0, 1.9], [1.1, 1.0, 0.9])
        # difference 1, each variance 0.01 / 3 -> t = 1 / sqrt(0.02 / 3)
        np.testing.assert_allclose(r.t, 1 / math.sqrt(0.02 / 3), rtol=1e-12)
        assert abs(r.t - 12.25) < 0.01
        np.testing.assert_allclose(r.df, 4.0, rtol=1e-12)
        assert r.p < 0.001 and r.significant

    @pytest.mark.parametrize("seed", range(30))
    def test_scipy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(0, rng.uniform(0.5, 2), int(rng.integers(2, 30)))
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), int(rng.integers(2, 30)))
        ref = sps.ttest_ind(a, b, equal_var=False)
        r = welch_ttest(a, b)
        np.testing.assert_allclose(r.t, ref.statistic, rtol=1e-10)
        np.testing.assert_allclose(r.p, ref.pvalue, rtol=1e-8, atol=1e-15)

    def test_tail_matches_t_distribution(self):
        for df in (1.0, 2.5, 9.0, 60.0):
            for t in (0.0, 0.5, 2.0, 7.0):
                np.testing.assert_allclose(student_t_sf2(t, df), 2 * sps.t.sf(t, df), rtol=1e-10)

    def test_degenerate(self):
        same = welch_ttest([1.0, 1.0], [1.0, 1.0])
        assert same.p == 1.0 and same.degenerate
        diff = welch_ttest([1.0, 1.0], [0.5, 0.5])
        assert diff.p == 0.0 and diff.t == math.inf and diff.degenerate and diff.significant

    def test_too_few(self):
        with pytest.raises(ValueError):
            welch_ttest([1.0], [1.0, 2.0])

    def test_calibration(self):
        rng = np.random.default_rng(2024)
        hits = sum(welch_ttest(rng.standard_normal(10), rng.standard_normal(10)).significant
                   for _ in range(1000))
        assert 0.03 <= hits / 1000 <= 0.07
