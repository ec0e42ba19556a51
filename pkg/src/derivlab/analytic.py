"""Closed-form European pricing under the lognormal (Black-Scholes) model.

Covers calls and puts with a continuous dividend yield, options on futures
(Black-76), proportional discrete dividends, the Margrabe exchange option and
the full set of Greeks.  Functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DomainError

SQRT_2PI = math.sqrt(2.0 * math.pi)


class OptionKind(str, enum.Enum):
    CALL = "call"
    PUT = "put"

    @classmethod
    def parse(cls, value: "OptionKind | str") -> "OptionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DomainError(f"option kind must be 'call' or 'put', got {value!r}") from None


@dataclass(frozen=True)
class OptionSpec:
    kind: OptionKind
    strike: float

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind.parse(self.kind))
        if np.any(np.asarray(self.strike) <= 0):
            raise DomainError("strike must be positive")

    @property
    def is_call(self) -> bool:
        return self.kind is OptionKind.CALL


@dataclass(frozen=True)
class BsParams:
    """Market state for the lognormal model.

    ``time_to_maturity`` is T - t in years; ``dividend_yield`` is the
    continuous yield q.
    """

    spot: float
    rate: float
    sigma: float
    time_to_maturity: float
    dividend_yield: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.spot) <= 0):
            raise DomainError("spot must be positive")
        if np.any(np.asarray(self.sigma) <= 0):
            raise DomainError("sigma must be positive (use intrinsic_forward for the sigma -> 0 limit)")
        if np.any(np.asarray(self.time_to_maturity) <= 0):
            raise DomainError("time_to_maturity must be positive (use intrinsic_forward at expiry)")

    @property
    def forward(self):
        return self.spot * np.exp((self.rate - self.dividend_yield) * self.time_to_maturity)

    def replace(self, **changes) -> "BsParams":
        fields = dict(
            spot=self.spot,
            rate=self.rate,
            sigma=self.sigma,
            time_to_maturity=self.time_to_maturity,
            dividend_yield=self.dividend_yield,
        )
        fields.update(changes)
        return BsParams(**fields)


@dataclass(frozen=True)
class GreeksReport:
    delta: float
    theta: float
    gamma: float
    vega: float
    rho: float
    lambda_elasticity: float
    vanna: float
    volga: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ExchangeSpec:
    s1: float
    s2: float
    sigma1: float
    sigma2: float
    rho: float
    time_to_maturity: float

    def __post_init__(self):
        if self.s1 <= 0 or self.s2 <= 0:
            raise DomainError("exchange option asset prices must be positive")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise DomainError("volatilities must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError("correlation must lie in [-1, 1]")
        if self.time_to_maturity <= 0:
            raise DomainError("time_to_maturity must be positive")

    @property
    def combined_variance(self) -> float:
        var = self.sigma1**2 + self.sigma2**2 - 2.0 * self.rho * self.sigma1 * self.sigma2
        return max(var, 0.0)


class DegenerateVarianceWarning(RuntimeWarning):
    """Exchange option priced at intrinsic because the ratio has no variance."""


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def d1_d2(spot, strike, rate, dividend_yield, sigma, tau):
    vol_sqrt_t = sigma * np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate - dividend_yield + 0.5 * sigma * sigma) * tau) / vol_sqrt_t
    return d1, d1 - vol_sqrt_t


def _price(spot, strike, rate, dividend_yield, sigma, tau, is_call):
    d1, d2 = d1_d2(spot, strike, rate, dividend_yield, sigma, tau)
    df_q = np.exp(-dividend_yield * tau)
    df_r = np.exp(-rate * tau)
    if is_call:
        return spot * df_q * ndtr(d1) - strike * df_r * ndtr(d2)
    return strike * df_r * ndtr(-d2) - spot * df_q * ndtr(-d1)


def bs_price(params: BsParams, spec: OptionSpec):
    """Black-Scholes price of a European call or put with dividend yield."""
    return _price(
        params.spot,
        spec.strike,
        params.rate,
        params.dividend_yield,
        params.sigma,
        params.time_to_maturity,
        spec.is_call,
    )


def intrinsic_forward(spot, strike, rate, tau, kind="call", dividend_yield=0.0):
    """Deterministic (sigma -> 0) limit: discounted intrinsic value on the forward."""
    kind = OptionKind.parse(kind)
    forward = spot * np.exp((rate - dividend_yield) * tau)
    payoff = forward - strike if kind is OptionKind.CALL else strike - forward
    return np.exp(-rate * tau) * np.maximum(payoff, 0.0)


def put_call_parity_gap(params: BsParams, strike):
    """C - P - (S e^{-q tau} - K e^{-r tau}); zero up to rounding."""
    tau = params.time_to_maturity
    call = bs_price(params, OptionSpec(OptionKind.CALL, strike))
    put = bs_price(params, OptionSpec(OptionKind.PUT, strike))
    forward_value = params.spot * np.exp(-params.dividend_yield * tau) - strike * np.exp(-params.rate * tau)
    return call - put - forward_value


def black76_price(future_price, strike, rate, sigma, tau, kind="call"):
    """Option on a futures price; the future behaves like a stock yielding r."""
    params = BsParams(spot=future_price, rate=rate, sigma=sigma, time_to_maturity=tau, dividend_yield=rate)
    return bs_price(params, OptionSpec(OptionKind.parse(kind), strike))


def discrete_dividend_forward(spot, rate, tau, dividend_log_rates: Sequence[float] = ()):
    """Forward price when proportional dividends exp(-delta_i) fall in (t, T].

    Uses the martingale-consistent forward S exp(r tau - sum delta_i).
    """
    deltas = np.asarray(list(dividend_log_rates), dtype=float)
    if np.any(deltas < 0):
        raise DomainError("dividend log-rates must be non-negative")
    return spot * np.exp(rate * tau - deltas.sum())


def margrabe_price(spec: ExchangeSpec) -> float:
    """Value of the right to exchange asset 2 for asset 1 at maturity.

    Equal to a zero-rate Black-Scholes call on s1 struck at s2 with the
    volatility of the ratio.  With zero ratio variance the option is worth its
    intrinsic value (s1 - s2)^+ and a DegenerateVarianceWarning is issued.
    """
    var = spec.combined_variance
    if var * spec.time_to_maturity < 1e-300:
        if spec.s1 != spec.s2:
            warnings.warn("ratio variance is zero; returning intrinsic value", DegenerateVarianceWarning, stacklevel=2)
        return max(spec.s1 - spec.s2, 0.0)
    return float(_price(spec.s1, spec.s2, 0.0, 0.0, math.sqrt(var), spec.time_to_maturity, True))


def greeks(params: BsParams, spec: OptionSpec) -> GreeksReport:
    """Exact derivatives of the Black-Scholes price.

    theta is the calendar derivative dC/dt at fixed maturity, per year.
    """
    S, K = params.spot, spec.strike
    r, q, sigma, tau = params.rate, params.dividend_yield, params.sigma, params.time_to_maturity
    d1, d2 = d1_d2(S, K, r, q, sigma, tau)
    sqrt_t = np.sqrt(tau)
    df_q = np.exp(-q * tau)
    df_r = np.exp(-r * tau)
    pdf1 = norm_pdf(d1)

    gamma = df_q * pdf1 / (S * sigma * sqrt_t)
    vega = S * df_q * pdf1 * sqrt_t
    vanna = -df_q * pdf1 * d2 / sigma
    volga = vega * d1 * d2 / sigma
    decay = -S * df_q * pdf1 * sigma / (2.0 * sqrt_t)
    if spec.is_call:
        delta = df_q * ndtr(d1)
        theta = decay - r * K * df_r * ndtr(d2) + q * S * df_q * ndtr(d1)
        rho = K * tau * df_r * ndtr(d2)
    else:
        delta = -df_q * ndtr(-d1)
        theta = decay + r * K * df_r * ndtr(-d2) - q * S * df_q * ndtr(-d1)
        rho = -K * tau * df_r * ndtr(-d2)
    price = bs_price(params, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        elasticity = delta * S / price
    return GreeksReport(
        delta=delta,
        theta=theta,
        gamma=gamma,
        vega=vega,
        rho=rho,
        lambda_elasticity=elasticity,
        vanna=vanna,
        volga=volga,
    )


def hedge_premium(params: BsParams, spec: OptionSpec):
    """Premium over the risk-free rate earned by the delta hedge: -theta - sigma^2 S^2 gamma / 2."""
    g = greeks(params, spec)
    return -g.theta - 0.5 * params.sigma**2 * params.spot**2 * g.gamma


def pde_residual(params: BsParams, spec: OptionSpec):
    """theta + sigma^2 S^2 gamma / 2 + (r - q) S delta - r C; zero for any European payoff."""
    g = greeks(params, spec)
    price = bs_price(params, spec)
    return (
        g.theta
        + 0.5 * params.sigma**2 * params.spot**2 * g.gamma
        + (params.rate - params.dividend_yield) * params.spot * g.delta
        - params.rate * price
    )
