import math

import numpy as np
import pytest
from scipy import stats

from app.services.stat_tests import (
    CheckResult,
    ValidationReport,
    category_counts,
    chi2_goodness,
    chi2_homogeneity,
    chi2_independence,
    ks_one_sample,
    ks_threshold,
    ks_two_sample,
    mean_check,
    permutation_iid_check,
    proportion_check,
)


class TestKs:
    def test_threshold(self):
        np.testing.assert_allclose(ks_threshold(10000), 1.95 * math.sqrt(2.0 / 10000))
        np.testing.assert_allclose(ks_threshold(100, 400, 1.0), math.sqrt(500 / 40000))

    def test_same_law(self, stream):
        a = stream(1).exponential(size=5000)
        b = stream(2).exponential(size=5000)
        assert ks_two_sample("same", a, b).passed

    def test_different_laws(self, stream):
        a = stream(1).exponential(size=5000)
        b = stream(2).exponential(scale=1.2, size=5000)
        assert not ks_two_sample("different", a, b).passed

    def test_empty_sample_fails(self):
        check = ks_two_sample("empty", [], [1.0, 2.0])
        assert not check.passed
        assert check.to_dict()["statistic"] is None

    def test_one_sample(self, rng):
        assert ks_one_sample("uniform", rng.random(5000), stats.uniform.cdf).passed
        assert not ks_one_sample("shifted", rng.random(5000) + 0.1, stats.uniform.cdf).passed


class TestChi2:
    def test_category_counts(self):
        np.testing.assert_array_equal(category_counts(["a", "b", "b"], ["a", "b", "c"]), [1, 2, 0])

    def test_homogeneity(self):
        assert chi2_homogeneity("same", [250, 750], [260, 740]).passed
        assert not chi2_homogeneity("swapped", [250, 750], [750, 250]).passed

    def test_single_category(self):
        assert chi2_homogeneity("one", [10, 0], [20, 0]).passed

    def test_goodness(self):
        assert chi2_goodness("fair", [498, 502], [0.5, 0.5]).passed
        assert not chi2_goodness("biased", [400, 600], [0.5, 0.5]).passed

    def test_impossible_category(self):
        check = chi2_goodness("impossible", [10, 1], [1.0, 0.0])
        assert not check.passed and check.p_value == 0.0

    def test_independence(self):
        table = np.array([[100, 100], [100, 100]])
        assert chi2_independence("flat", table).passed
        assert not chi2_independence("diagonal", np.array([[180, 20], [20, 180]])).passed


class TestMoments:
    def test_proportion(self):
        assert proportion_check("p", 7500, 10000, 0.75).passed
        assert not proportion_check("p", 7000, 10000, 0.75).passed
        assert not proportion_check("none", 0, 0, 0.5).passed

    def test_degenerate_proportion(self):
        assert proportion_check("never", 0, 100, 0.0).passed
        assert not proportion_check("never", 1, 100, 0.0).passed

    def test_mean(self, rng):
        assert mean_check("mean", rng.exponential(2.0, size=5000), 2.0, z=4.0).passed
        assert not mean_check("mean", rng.exponential(2.0, size=5000), 2.5).passed
        assert not mean_check("short", [1.0], 1.0).passed


class TestPermutation:
    def test_iid(self, stream):
        assert permutation_iid_check("iid", stream(1).exponential(size=300), stream(2)).passed

    def test_autocorrelated(self, stream):
        noise = stream(1).normal(size=300)
        walk = np.convolve(noise, np.ones(10), mode="valid")
        assert not permutation_iid_check("walk", walk, stream(2)).passed

    def test_too_short(self, rng):
        assert permutation_iid_check("short", [1.0, 2.0], rng).passed


class TestReport:
    def test_collects(self):
        report = ValidationReport(seeds={"seed": 1})
        report.add(CheckResult("a", 0.1, 0.2, True))
        report.add(CheckResult("b", math.inf, 0.2, False))
        assert not report.passed
        assert report.failed() == ["b"]
        assert report.get("a").statistic == 0.1
        with pytest.raises(KeyError):
            report.get("c")
        payload = report.to_dict()
        assert payload["passed"] is False
        assert payload["checks"][1]["statistic"] is None

    def test_empty_report_passes(self):
        assert ValidationReport().passed
