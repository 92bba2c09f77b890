import math

import numpy as np
import pytest

from app.errors import InvalidParameter, MissingMajorant, NegativeTime, ReversedInterval
from app.services.rate_model import (
    Callback,
    Constant,
    ExpAffine,
    PiecewiseConstant,
    Temperature,
    integrate_rate,
    invert_integrated_rate,
    log_rate_at,
    majorant,
    rate_at,
    rate_from_dict,
    rate_to_dict,
    sum_of_rates,
)

E = math.e


def exp_callback():
    return Callback(evaluator=math.exp, declared_majorant=lambda s, t: math.exp(t))


class TestTemperature:
    def test_identity(self):
        assert Temperature().temper(2.5) == 2.5

    @pytest.mark.parametrize("beta", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_non_positive(self, beta):
        with pytest.raises(InvalidParameter):
            Temperature(beta)


class TestRateAt:
    def test_constant(self):
        assert rate_at(Constant(2.0), 5.0, 1.0) == 2.0
        assert rate_at(Constant(2.0), 0.0, 3.0) == 8.0

    def test_exp_affine_tempered(self):
        np.testing.assert_allclose(rate_at(ExpAffine(0.0, 1.0), 1.0, 2.0), E**2, rtol=1e-12)

    def test_piecewise_is_right_continuous(self):
        f = PiecewiseConstant((1.0, 2.0), (1.0, 3.0, 0.5))
        assert rate_at(f, 0.999) == 1.0
        assert rate_at(f, 1.0) == 3.0
        assert rate_at(f, 7.0) == 0.5

    def test_negative_time(self):
        with pytest.raises(NegativeTime):
            rate_at(Constant(1.0), -0.1)

    @pytest.mark.parametrize("beta", [0.5, 2.0, 4.0])
    def test_tempering_identity(self, beta):
        for f in (Constant(2.0), ExpAffine(-0.3, 0.7), PiecewiseConstant((1.0,), (0.4, 3.0)), exp_callback()):
            for t in (0.0, 0.5, 1.5):
                np.testing.assert_allclose(rate_at(f, t, 1.0), rate_at(f, t, beta) ** (1.0 / beta), rtol=1e-12)

    def test_log_rate(self):
        assert log_rate_at(Constant(0.0), 1.0) == -math.inf
        np.testing.assert_allclose(log_rate_at(ExpAffine(1.0, 2.0), 3.0, 2.0), 14.0)


class TestIntegrateRate:
    def test_examples(self):
        assert integrate_rate(Constant(2.0), 0.0, 3.0, 1.0) == 6.0
        assert integrate_rate(Constant(2.0), 0.0, 3.0, 2.0) == 12.0
        np.testing.assert_allclose(integrate_rate(ExpAffine(0.0, 1.0), 0.0, 1.0), E - 1.0, rtol=1e-12)

    def test_callback_matches_closed_form(self):
        np.testing.assert_allclose(integrate_rate(exp_callback(), 0.0, 1.0), E - 1.0, atol=1e-10)
        np.testing.assert_allclose(integrate_rate(exp_callback(), 0.2, 1.3, 2.0), integrate_rate(ExpAffine(0.0, 1.0), 0.2, 1.3, 2.0), atol=1e-9)

    def test_piecewise(self):
        f = PiecewiseConstant((1.0, 2.0), (1.0, 3.0, 0.5))
        np.testing.assert_allclose(integrate_rate(f, 0.5, 2.5), 0.5 + 3.0 + 0.25)
        np.testing.assert_allclose(integrate_rate(f, 0.0, 2.0, 2.0), 1.0 + 9.0)

    def test_additivity(self):
        rng = np.random.default_rng(42)
        rates = [Constant(1.5), ExpAffine(0.1, -0.4), PiecewiseConstant((0.5, 1.7), (2.0, 0.0, 1.0)), exp_callback()]
        for f in rates:
            for _ in range(20):
                s, u, t = np.sort(rng.uniform(0.0, 3.0, size=3))
                total = integrate_rate(f, s, t, 1.5)
                np.testing.assert_allclose(integrate_rate(f, s, u, 1.5) + integrate_rate(f, u, t, 1.5), total, atol=1e-9)

    def test_monotone_in_end_point(self):
        f = ExpAffine(0.0, -1.0)
        values = [integrate_rate(f, 0.5, t) for t in np.linspace(0.5, 5.0, 20)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_infinite_horizon(self):
        np.testing.assert_allclose(integrate_rate(ExpAffine(0.0, -1.0), 0.0, math.inf), 1.0)
        assert integrate_rate(Constant(1.0), 0.0, math.inf) == math.inf
        assert integrate_rate(Constant(0.0), 0.0, math.inf) == 0.0

    def test_reversed_interval(self):
        with pytest.raises(ReversedInterval):
            integrate_rate(Constant(1.0), 2.0, 1.0)


class TestMajorant:
    def test_examples(self):
        assert majorant(Constant(2.0), 0.0, 3.0) == 2.0
        np.testing.assert_allclose(majorant(ExpAffine(0.0, 1.0), 0.0, 2.0), E**2)
        assert majorant(PiecewiseConstant((1.0,), (1.0, 3.0)), 0.0, 2.0, 2.0) == 9.0

    def test_missing(self):
        with pytest.raises(MissingMajorant):
            majorant(Callback(evaluator=lambda t: 1.0), 0.0, 1.0)

    def test_sound_on_samples(self):
        rng = np.random.default_rng(42)
        rates = [ExpAffine(0.3, -1.2), ExpAffine(-1.0, 0.8), PiecewiseConstant((0.4, 1.1), (0.5, 2.0, 1.0)), exp_callback()]
        for f in rates:
            s, t = 0.3, 1.9
            bound = majorant(f, s, t, 2.0)
            taus = rng.uniform(s, t, size=1000)
            assert all(rate_at(f, tau, 2.0) <= bound * (1 + 1e-12) for tau in taus)


class TestInverse:
    @pytest.mark.parametrize(
        "f",
        [Constant(2.0), PiecewiseConstant((1.0, 2.0), (0.5, 0.0, 3.0)), ExpAffine(0.2, 0.9), ExpAffine(0.2, -0.3)],
    )
    def test_inverts_integral(self, f):
        for s, t in ((0.0, 0.7), (0.4, 2.6), (1.2, 1.5)):
            mass = integrate_rate(f, s, t, 1.3)
            if mass > 0:
                np.testing.assert_allclose(invert_integrated_rate(f, s, mass, 1.3), t, rtol=1e-9)

    def test_finite_total_mass(self):
        # ∫_0^∞ e^{-t} = 1
        assert invert_integrated_rate(ExpAffine(0.0, -1.0), 0.0, 1.5) is None
        assert invert_integrated_rate(PiecewiseConstant((1.0,), (2.0, 0.0)), 0.0, 3.0) is None
        assert invert_integrated_rate(Constant(0.0), 0.0, 0.1) is None

    def test_callback_has_no_inverse(self):
        with pytest.raises(InvalidParameter):
            invert_integrated_rate(exp_callback(), 0.0, 1.0)


class TestOverflow:
    def test_rate_saturates_to_infinity(self):
        assert rate_at(ExpAffine(0.0, 1.0), 800.0) == math.inf
        assert rate_at(ExpAffine(0.0, 1.0), 400.0, 2.0) == math.inf
        assert rate_at(Constant(1e200), 0.0, 2.0) == math.inf
        np.testing.assert_allclose(log_rate_at(ExpAffine(0.0, 1.0), 800.0), 800.0)

    def test_integral_saturates_to_infinity(self):
        assert integrate_rate(ExpAffine(0.0, 1.0), 0.0, 800.0) == math.inf
        assert integrate_rate(ExpAffine(800.0, 0.0), 0.0, 1.0) == math.inf
        assert integrate_rate(ExpAffine(800.0, -1.0), 0.0, 1.0) == math.inf

    def test_inverse_of_vanishing_rate(self):
        assert invert_integrated_rate(ExpAffine(-800.0, 0.0), 0.0, 1.0) is None
        t = invert_integrated_rate(ExpAffine(0.0, 1.0), 0.0, 1e300)
        np.testing.assert_allclose(t, math.log1p(1e300), rtol=1e-12)


class TestSumOfRates:
    def test_constants(self):
        assert sum_of_rates([Constant(1.0), Constant(3.0)], 2.0) == Constant(10.0)

    def test_piecewise_merge(self):
        total = sum_of_rates([Constant(1.0), PiecewiseConstant((1.0,), (0.0, 2.0)), PiecewiseConstant((0.5,), (1.0, 4.0))])
        assert isinstance(total, PiecewiseConstant)
        for t, expected in ((0.2, 2.0), (0.7, 5.0), (1.5, 7.0)):
            assert rate_at(total, t) == expected

    def test_general_sum_is_callback(self):
        total = sum_of_rates([ExpAffine(0.0, 1.0), Constant(2.0)], 2.0)
        assert isinstance(total, Callback)
        np.testing.assert_allclose(rate_at(total, 1.0), E**2 + 4.0)
        assert majorant(total, 0.0, 1.0) >= rate_at(total, 1.0)


class TestCodec:
    def test_round_trip(self):
        f = PiecewiseConstant((1.0, 2.5), (0.0, 1.0, 2.0))
        assert rate_from_dict(rate_to_dict(f)) == f
        assert rate_from_dict({"kind": "exp_affine", "offset": 0.0, "slope": 1.0}) == ExpAffine(0.0, 1.0)

    def test_rejects_unknown_kind(self):
        with pytest.raises(InvalidParameter):
            rate_from_dict({"kind": "hawkes"})

    def test_invalid_piecewise(self):
        with pytest.raises(InvalidParameter):
            PiecewiseConstant((2.0, 1.0), (1.0, 1.0, 1.0))
        with pytest.raises(InvalidParameter):
            PiecewiseConstant((1.0,), (1.0, -1.0))
