import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derivlab.analytic import (
    BsParams,
    DegenerateVarianceWarning,
    ExchangeSpec,
    OptionKind,
    OptionSpec,
    black76_price,
    bs_price,
    discrete_dividend_forward,
    greeks,
    hedge_premium,
    intrinsic_forward,
    margrabe_price,
    norm_cdf,
    pde_residual,
    put_call_parity_gap,
)
from derivlab.errors import DomainError

CALL = OptionSpec(OptionKind.CALL, 50.0)
PUT = OptionSpec(OptionKind.PUT, 50.0)
FIG_PARAMS = BsParams(spot=50.0, rate=0.02, sigma=0.2, time_to_maturity=0.25)


def lognormal_quadrature_call(spot, strike, drift, sigma, tau, discount, nodes=400):
    """e^{-r tau} E (S_T - K)^+ by Gauss-Legendre in the standard-normal variable."""
    vol = sigma * math.sqrt(tau)
    mean = math.log(spot) + (drift - 0.5 * sigma**2) * tau
    z_star = (math.log(strike) - mean) / vol
    x, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = z_star, z_star + 40.0
    z = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    integrand = (np.exp(mean + vol * z) - strike) * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return discount * 0.5 * (hi - lo) * np.dot(w, integrand)


class TestBsPrice:
    def test_atm_call_matches_quadrature(self):
        expected = lognormal_quadrature_call(50, 50, 0.02, 0.2, 0.25, math.exp(-0.02 * 0.25))
        assert abs(bs_price(FIG_PARAMS, CALL) - expected) < 1e-10

    def test_dividend_call_matches_quadrature(self):
        params = FIG_PARAMS.replace(dividend_yield=0.05)
        expected = lognormal_quadrature_call(50, 50, 0.02 - 0.05, 0.2, 0.25, math.exp(-0.02 * 0.25))
        assert abs(bs_price(params, CALL) - expected) < 1e-10

    def test_zero_strike_limit(self):
        params = FIG_PARAMS.replace(dividend_yield=0.03)
        price = bs_price(params, OptionSpec("call", 1e-12))
        assert price == pytest.approx(50 * math.exp(-0.03 * 0.25), rel=1e-12)

    @pytest.mark.parametrize("field,value", [("sigma", 0.0), ("time_to_maturity", 0.0), ("spot", -1.0)])
    def test_rejects_degenerate_inputs(self, field, value):
        with pytest.raises(DomainError):
            FIG_PARAMS.replace(**{field: value})

    def test_intrinsic_forward_helper(self):
        assert intrinsic_forward(50, 45, 0.02, 0.25) == pytest.approx(50 - 45 * math.exp(-0.005))
        assert intrinsic_forward(50, 45, 0.02, 0.25, kind="put") == 0.0

    def test_small_sigma_approaches_intrinsic_forward(self):
        price = bs_price(FIG_PARAMS.replace(sigma=1e-6), OptionSpec("call", 45.0))
        assert price == pytest.approx(intrinsic_forward(50, 45, 0.02, 0.25), abs=1e-12)

    def test_bounds_and_monotonicity(self):
        strikes = np.linspace(20, 90, 50)
        calls = bs_price(FIG_PARAMS, OptionSpec("call", strikes))
        puts = bs_price(FIG_PARAMS, OptionSpec("put", strikes))
        lower = np.maximum(50 - strikes * math.exp(-0.005), 0)
        assert np.all(calls >= lower - 1e-12) and np.all(calls <= 50)
        assert np.all(np.diff(calls) <= 0) and np.all(np.diff(puts) >= 0)
        sigmas = np.linspace(0.05, 1.0, 30)
        by_sigma = bs_price(FIG_PARAMS.replace(sigma=sigmas), CALL)
        assert np.all(np.diff(by_sigma) > 0)
        taus = np.linspace(0.05, 3.0, 30)
        by_tau = bs_price(FIG_PARAMS.replace(time_to_maturity=taus), CALL)
        assert np.all(np.diff(by_tau) > 0)

    @given(
        spot=st.floats(1, 500),
        k_ratio=st.floats(0.3, 3),
        scale=st.floats(0.01, 100),
        sigma=st.floats(0.02, 1.5),
        tau=st.floats(0.01, 5),
    )
    @settings(max_examples=200, deadline=None)
    def test_homogeneity(self, spot, k_ratio, scale, sigma, tau):
        p = BsParams(spot=spot, rate=0.03, sigma=sigma, time_to_maturity=tau, dividend_yield=0.01)
        base = bs_price(p, OptionSpec("call", spot * k_ratio))
        scaled = bs_price(p.replace(spot=spot * scale), OptionSpec("call", spot * k_ratio * scale))
        assert scaled == pytest.approx(scale * base, rel=1e-9, abs=1e-12 * spot * scale)


class TestParity:
    def test_fig_params(self):
        assert abs(put_call_parity_gap(FIG_PARAMS, 50.0)) < 1e-12 * 50

    def test_dividend_variant(self):
        assert abs(put_call_parity_gap(FIG_PARAMS.replace(dividend_yield=0.05), 50.0)) < 1e-12 * 50

    def test_random_sweep(self):
        rng = np.random.default_rng(11)
        n = 1000
        params = BsParams(
            spot=rng.uniform(10, 200, n),
            rate=rng.uniform(-0.02, 0.1, n),
            sigma=rng.uniform(0.05, 1.0, n),
            time_to_maturity=rng.uniform(0.02, 5, n),
            dividend_yield=rng.uniform(0, 0.08, n),
        )
        gaps = put_call_parity_gap(params, params.spot * rng.uniform(0.5, 2.0, n))
        assert np.max(np.abs(gaps)) < 1e-10


class TestBlack76:
    def test_identity_with_dividend_rate(self):
        a = black76_price(50, 50, 0.02, 0.2, 0.25)
        b = bs_price(BsParams(50, 0.02, 0.2, 0.25, dividend_yield=0.02), CALL)
        assert abs(a - b) < 1e-14

    def test_zero_rate(self):
        assert black76_price(50, 50, 0.0, 0.2, 0.25, "put") == bs_price(
            BsParams(50, 0.0, 0.2, 0.25), PUT
        )

    def test_against_quadrature(self):
        expected = lognormal_quadrature_call(55, 50, 0.0, 0.2, 0.25, math.exp(-0.02 * 0.25))
        assert abs(black76_price(55, 50, 0.02, 0.2, 0.25) - expected) < 1e-10


class TestDiscreteDividends:
    def test_no_dividends(self):
        assert discrete_dividend_forward(100, 0.03, 2.0) == pytest.approx(100 * math.exp(0.06), rel=1e-15)

    def test_single_dividend(self):
        assert discrete_dividend_forward(100, 0.0, 1.0, [0.02]) == pytest.approx(100 * math.exp(-0.02), rel=1e-15)

    def test_monotone_in_each_dividend(self):
        base = discrete_dividend_forward(100, 0.03, 1.0, [0.01, 0.02])
        assert discrete_dividend_forward(100, 0.03, 1.0, [0.015, 0.02]) < base
        assert discrete_dividend_forward(100, 0.03, 1.0, [0.01, 0.025]) < base

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            discrete_dividend_forward(100, 0.03, 1.0, [-0.01])

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(3)
        s0, r, sigma, tau, deltas = 100.0, 0.03, 0.3, 1.0, [0.02, 0.015]
        w = rng.standard_normal(400_000) * math.sqrt(tau)
        s_t = s0 * np.exp((r - 0.5 * sigma**2) * tau + sigma * w - sum(deltas))
        se = s_t.std(ddof=1) / math.sqrt(s_t.size)
        assert abs(s_t.mean() - discrete_dividend_forward(s0, r, tau, deltas)) < 3 * se


class TestMargrabe:
    def test_degenerate_ratio(self):
        spec = ExchangeSpec(60, 50, 0.2, 0.2, 1.0, 1.0)
        with pytest.warns(DegenerateVarianceWarning):
            assert margrabe_price(spec) == pytest.approx(10.0)

    def test_atm_symmetric_form(self):
        # sigma^2 = 0.09 from sigma1 = 0.3, sigma2 = 0, rho = 0
        spec = ExchangeSpec(50, 50, 0.3, 0.0, 0.0, 1.0)
        assert margrabe_price(spec) == pytest.approx(50 * (2 * norm_cdf(0.15) - 1), rel=1e-13)

    def test_homogeneous_degree_one(self):
        a = margrabe_price(ExchangeSpec(55, 50, 0.2, 0.3, -0.5, 0.5))
        b = margrabe_price(ExchangeSpec(110, 100, 0.2, 0.3, -0.5, 0.5))
        assert b == pytest.approx(2 * a, rel=1e-13)

    def test_reduces_to_zero_rate_call(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            price = margrabe_price(ExchangeSpec(55, 50, 0.25, 1e-8, 0.3, 0.5))
        ref = bs_price(BsParams(55, 0.0, 0.25, 0.5), OptionSpec("call", 50))
        assert abs(price - ref) < 1e-6

    def test_against_correlated_monte_carlo(self):
        s1, s2, sig1, sig2, rho, tau, r = 55.0, 50.0, 0.2, 0.3, -0.5, 0.5, 0.04
        rng = np.random.default_rng(7)
        n = 1_000_000
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        w2 = z2
        w1 = rho * z2 + math.sqrt(1 - rho**2) * z1
        st1 = s1 * np.exp((r - 0.5 * sig1**2) * tau + sig1 * math.sqrt(tau) * w1)
        st2 = s2 * np.exp((r - 0.5 * sig2**2) * tau + sig2 * math.sqrt(tau) * w2)
        payoff = math.exp(-r * tau) * np.maximum(st1 - st2, 0)
        se = payoff.std(ddof=1) / math.sqrt(n)
        assert abs(payoff.mean() - margrabe_price(ExchangeSpec(s1, s2, sig1, sig2, rho, tau))) < 3 * se


FIRST = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))  # / 12h
SECOND = ((-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0))  # / 12h^2


def finite_difference_greeks(params: BsParams, spec: OptionSpec, h=1e-3):
    """Fourth-order central differences of bs_price with relative step h."""

    def price(**kw):
        return bs_price(params.replace(**kw), spec)

    base = dict(
        spot=params.spot,
        sigma=params.sigma,
        time_to_maturity=params.time_to_maturity,
        rate=params.rate,
    )
    steps = dict(
        spot=h * params.spot,
        sigma=h * params.sigma,
        time_to_maturity=h * params.time_to_maturity,
        rate=h * max(abs(params.rate), 0.01),
    )

    def d1(name):
        s = steps[name]
        return sum(w * price(**{name: base[name] + k * s}) for k, w in FIRST) / (12 * s)

    def d2(name):
        s = steps[name]
        return sum(w * price(**{name: base[name] + k * s}) for k, w in SECOND) / (12 * s * s)

    def mixed(a, b):
        sa, sb = steps[a], steps[b]
        total = 0.0
        for ka, wa in FIRST:
            for kb, wb in FIRST:
                total += wa * wb * price(**{a: base[a] + ka * sa, b: base[b] + kb * sb})
        return total / (144 * sa * sb)

    delta = d1("spot")
    return dict(
        delta=delta,
        gamma=d2("spot"),
        vega=d1("sigma"),
        theta=-d1("time_to_maturity"),
        rho=d1("rate"),
        vanna=mixed("spot", "sigma"),
        volga=d2("sigma"),
        lambda_elasticity=delta * params.spot / bs_price(params, spec),
    )


GREEK_NAMES = ["delta", "theta", "gamma", "vega", "rho", "lambda_elasticity", "vanna", "volga"]


def greek_mismatch(params, spec):
    """Worst relative mismatch between analytic and finite-difference Greeks.

    The denominator is floored at 1e-3 of the Greek's natural scale so that
    Greeks crossing zero (vanna near d2 = 0) are compared absolutely there.
    """
    exact = greeks(params, spec).as_dict()
    fd = finite_difference_greeks(params, spec)
    S, sig = params.spot, params.sigma
    vega_scale = S * math.sqrt(params.time_to_maturity) / math.sqrt(2 * math.pi)
    natural = dict(
        delta=1.0,
        gamma=1.0 / (S * sig),
        vega=vega_scale,
        theta=S * sig,
        rho=S * params.time_to_maturity,
        vanna=vega_scale / (S * sig),
        volga=vega_scale / sig,
        lambda_elasticity=1.0,
    )
    worst = 0.0
    for name in GREEK_NAMES:
        denom = max(abs(exact[name]), 1e-3 * natural[name])
        worst = max(worst, abs(exact[name] - fd[name]) / denom)
    return worst


class TestGreeks:
    def test_deep_itm_delta(self):
        g = greeks(BsParams(100, 0.02, 0.2, 0.25), CALL)
        assert abs(g.delta - 1.0) < 1e-6

    @pytest.mark.parametrize("spec", [CALL, PUT])
    def test_atm_all_greeks_vs_finite_differences(self, spec):
        assert greek_mismatch(FIG_PARAMS, spec) < 1e-5

    def test_random_draws_vs_finite_differences(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            params = BsParams(
                spot=rng.uniform(20, 200),
                rate=rng.uniform(0.0, 0.08),
                sigma=rng.uniform(0.1, 0.6),
                time_to_maturity=rng.uniform(0.1, 2.0),
                dividend_yield=rng.uniform(0.0, 0.05),
            )
            strike = params.spot * rng.uniform(0.8, 1.25)
            kind = "call" if rng.random() < 0.5 else "put"
            assert greek_mismatch(params, OptionSpec(kind, strike)) < 1e-5

    def test_put_delta_parity(self):
        rng = np.random.default_rng(5)
        n = 100
        params = BsParams(
            spot=rng.uniform(20, 200, n),
            rate=rng.uniform(0.0, 0.08, n),
            sigma=rng.uniform(0.1, 0.8, n),
            time_to_maturity=rng.uniform(0.05, 3, n),
            dividend_yield=rng.uniform(0, 0.05, n),
        )
        k = params.spot * rng.uniform(0.5, 2, n)
        dc = greeks(params, OptionSpec("call", k)).delta
        dp = greeks(params, OptionSpec("put", k)).delta
        np.testing.assert_allclose(dp, dc - np.exp(-params.dividend_yield * params.time_to_maturity), atol=1e-14)

    def test_pde_residual_identity(self):
        rng = np.random.default_rng(9)
        n = 2000
        params = BsParams(
            spot=rng.uniform(20, 200, n),
            rate=rng.uniform(-0.01, 0.1, n),
            sigma=rng.uniform(0.05, 1.0, n),
            time_to_maturity=rng.uniform(0.05, 5, n),
            dividend_yield=rng.uniform(0, 0.08, n),
        )
        k = params.spot * rng.uniform(0.5, 2, n)
        for kind in ("call", "put"):
            spec = OptionSpec(kind, k)
            scale = np.maximum(bs_price(params, spec), 1e-2 * params.spot)
            assert np.max(np.abs(pde_residual(params, spec)) / scale) < 1e-9

    def test_gamma_and_vega_nonnegative(self):
        strikes = np.linspace(10, 200, 100)
        g = greeks(FIG_PARAMS, OptionSpec("put", strikes))
        assert np.all(g.gamma >= 0) and np.all(g.vega >= 0)


class TestHedgePremium:
    def test_call_positive_and_closed_form(self):
        from derivlab.analytic import d1_d2

        prem = hedge_premium(FIG_PARAMS, CALL)
        _, d2 = d1_d2(50, 50, 0.02, 0, 0.2, 0.25)
        assert prem > 0
        assert prem == pytest.approx(0.02 * 50 * math.exp(-0.005) * norm_cdf(d2), rel=1e-12)

    def test_put_negative(self):
        assert hedge_premium(FIG_PARAMS, PUT) < 0

    @pytest.mark.parametrize("spec", [CALL, PUT])
    def test_zero_rate(self, spec):
        assert abs(hedge_premium(FIG_PARAMS.replace(rate=0.0), spec)) < 1e-13
