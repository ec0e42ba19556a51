"""Implied volatility, SVI slices, static-arbitrage checks and Dupire local volatility.

Log-moneyness is measured against the forward, k = log(K / F(T)) with
F(T) = S exp((r - q) T), and total implied variance is omega = sigma_hat^2 T.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.special import ndtr

from .analytic import OptionKind, _price, norm_pdf
from .errors import (
    ArbitrageViolation,
    DomainError,
    InsufficientData,
    NoConvergence,
    PriceOutOfBounds,
    ValidationError,
)

SIGMA_LO, SIGMA_HI = 1e-6, 5.0
MAX_ITER = 200


# --------------------------------------------------------------------------
# implied volatility


def price_bounds(spot, strike, rate, tau, kind="call", dividend_yield=0.0):
    """No-arbitrage band (lower, upper) for a European option price."""
    kind = OptionKind.parse(kind)
    df_r, df_q = math.exp(-rate * tau), math.exp(-dividend_yield * tau)
    if kind is OptionKind.CALL:
        return max(spot * df_q - strike * df_r, 0.0), spot * df_q
    return max(strike * df_r - spot * df_q, 0.0), strike * df_r


def implied_vol(market_price, spot, strike, rate, tau, kind="call", dividend_yield=0.0, max_iter=MAX_ITER):
    """Volatility at which the Black-Scholes price equals ``market_price``.

    Newton steps on vega, safeguarded by a shrinking bisection bracket.  The
    bracket starts at [1e-6, 5] and is widened only if the price needs more
    than 500% volatility.
    """
    kind = OptionKind.parse(kind)
    if spot <= 0 or strike <= 0 or tau <= 0:
        raise DomainError("spot, strike and tau must be positive")
    lower, upper = price_bounds(spot, strike, rate, tau, kind, dividend_yield)
    if not lower < market_price < upper:
        raise PriceOutOfBounds(
            f"price {market_price!r} outside the no-arbitrage band ({lower:.12g}, {upper:.12g})"
        )
    is_call = kind is OptionKind.CALL
    sqrt_t = math.sqrt(tau)
    df_q = math.exp(-dividend_yield * tau)

    def f(sig):
        return float(_price(spot, strike, rate, dividend_yield, sig, tau, is_call)) - market_price

    lo, hi = SIGMA_LO, SIGMA_HI
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise NoConvergence("implied volatility above 1000 is not supported")
    if f(lo) > 0:
        # price is within rounding of the lower bound; below 1e-6 the answer is not resolvable
        raise NoConvergence("price implies volatility below 1e-6")

    # Newton on log price: far from the money the price is exponentially convex
    # in sigma while its logarithm is close to linear.
    log_target = math.log(market_price)
    sig = min(max(math.sqrt(2.0 * abs(math.log(spot / strike) + (rate - dividend_yield) * tau) / tau), 0.1), hi)
    widths = [hi - lo]
    for _ in range(max_iter):
        price = float(_price(spot, strike, rate, dividend_yield, sig, tau, is_call))
        if price == market_price:
            return sig
        if price > market_price:
            hi = sig
        else:
            lo = sig
        widths.append(hi - lo)
        d1 = (math.log(spot / strike) + (rate - dividend_yield + 0.5 * sig * sig) * tau) / (sig * sqrt_t)
        vega = spot * df_q * sqrt_t * math.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi)
        if price > 0 and vega > 0:
            candidate = sig - (math.log(price) - log_target) * price / vega
        else:
            candidate = math.nan
        stalled = len(widths) > 4 and widths[-1] > 0.5 * widths[-4]
        if not lo < candidate < hi or stalled:
            candidate = 0.5 * (lo + hi)
            widths.clear()
            widths.append(hi - lo)
        if abs(candidate - sig) <= 4e-16 * sig or hi - lo <= 4e-16 * hi:
            sig = candidate
            break
        sig = candidate
    else:
        raise NoConvergence(f"implied volatility did not converge in {max_iter} iterations")
    if abs(f(sig)) > 1e-10:
        raise NoConvergence(f"implied volatility stalled with price error {f(sig):.3g}")
    return sig


def strike_slope_bounds(spot, strike, rate, tau, sigma_hat, dividend_yield=0.0):
    """Bounds on d sigma_hat / dK implied by monotonicity of call and put prices in K."""
    if np.any(np.asarray(sigma_hat) <= 0):
        raise DomainError("sigma_hat must be positive")
    vol_t = sigma_hat * np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate - dividend_yield + 0.5 * sigma_hat**2) * tau) / vol_t
    d2 = d1 - vol_t
    vega_per_unit = spot * np.exp(-dividend_yield * tau) * np.sqrt(tau) * norm_pdf(d1)
    df_r = np.exp(-rate * tau)
    return -df_r * ndtr(-d2) / vega_per_unit, df_r * ndtr(d2) / vega_per_unit


def moment_bound(log_moneyness, tau):
    """Large-|x| ceiling sqrt(2|x| / tau) on implied volatility."""
    return np.sqrt(2.0 * np.abs(log_moneyness) / tau)


def p_bar_from_beta(beta_r):
    """Right-tail moment exponent implied by the asymptotic slope beta_R in [0, 2]."""
    beta_r = float(beta_r)
    if not 0.0 <= beta_r <= 2.0:
        raise DomainError("beta_R must lie in [0, 2]")
    if beta_r == 0.0:
        return math.inf
    return (2.0 - beta_r) ** 2 / (8.0 * beta_r)


def beta_from_p_bar(p_bar):
    """Inverse of p_bar_from_beta; p_bar = inf maps to 0."""
    p_bar = float(p_bar)
    if not p_bar >= 0.0:
        raise DomainError("p_bar must be non-negative")
    if math.isinf(p_bar):
        return 0.0
    if p_bar == 0.0:
        return 2.0
    # 2 - 4(sqrt(p^2 + p) - p) rewritten without cancellation
    s = math.sqrt(1.0 + 1.0 / p_bar)
    return 2.0 / (p_bar * (s + 1.0) ** 2)


# --------------------------------------------------------------------------
# dimensionless call price and the local-volatility denominator


def bs1_price(omega, k):
    """Call price per unit spot on the forward, N(d1) - e^k N(d2)."""
    sw = np.sqrt(omega)
    d1 = -k / sw + 0.5 * sw
    return ndtr(d1) - np.exp(k) * ndtr(d1 - sw)


def bs1_d_omega(omega, k):
    sw = np.sqrt(omega)
    d1 = -k / sw + 0.5 * sw
    return norm_pdf(d1) / (2.0 * sw)


def bs1_d_k(omega, k):
    sw = np.sqrt(omega)
    d2 = -k / sw - 0.5 * sw
    return -np.exp(k) * ndtr(d2)


def local_vol_denominator(k, omega, omega_k, omega_kk):
    """Denominator of sigma_loc^2 = omega_T / D in total-variance coordinates."""
    return (
        1.0
        - k * omega_k / omega
        + 0.25 * (-0.25 - 1.0 / omega + k * k / (omega * omega)) * omega_k**2
        + 0.5 * omega_kk
    )


def density_factor(k, omega, omega_k, omega_kk):
    """The butterfly function g(k); the risk-neutral density has the sign of g."""
    return (
        (1.0 - k * omega_k / (2.0 * omega)) ** 2
        - omega_k**2 / 4.0 * (1.0 / omega + 0.25)
        + 0.5 * omega_kk
    )


# --------------------------------------------------------------------------
# SVI slices


@dataclass(frozen=True)
class SviParams:
    a: float
    b: float
    rho: float
    m: float
    xi: float
    maturity: float | None = None

    def __post_init__(self):
        if self.b < 0:
            raise DomainError("SVI b must be non-negative")
        if not -1.0 < self.rho < 1.0:
            raise DomainError("SVI rho must lie in (-1, 1)")
        if self.xi <= 0:
            raise DomainError("SVI xi must be positive")
        if self.min_variance < -1e-12:
            raise DomainError("SVI slice has negative total variance")

    @property
    def min_variance(self) -> float:
        return self.a + self.b * self.xi * math.sqrt(1.0 - self.rho**2)

    @property
    def right_wing_slope(self) -> float:
        return self.b * (1.0 + self.rho)

    def as_tuple(self):
        return (self.a, self.b, self.rho, self.m, self.xi)

    def total_variance(self, k):
        x = np.asarray(k, dtype=float) - self.m
        return self.a + self.b * (self.rho * x + np.sqrt(x * x + self.xi**2))

    def d_k(self, k):
        x = np.asarray(k, dtype=float) - self.m
        return self.b * (self.rho + x / np.sqrt(x * x + self.xi**2))

    def d_kk(self, k):
        x = np.asarray(k, dtype=float) - self.m
        return self.b * self.xi**2 / (x * x + self.xi**2) ** 1.5

    def g(self, k):
        return density_factor(k, self.total_variance(k), self.d_k(k), self.d_kk(k))


def svi_total_variance(theta, k):
    a, b, rho, m, xi = theta
    x = k - m
    return a + b * (rho * x + np.sqrt(x * x + xi * xi))


@dataclass(frozen=True)
class ButterflyReport:
    k: np.ndarray
    g: np.ndarray
    min_g: float
    large_k: str  # "pass", "fail" or "inconclusive"

    @property
    def ok(self) -> bool | None:
        """True/False when decided, None when the large-k condition is inconclusive."""
        if self.min_g < -1e-12 or self.large_k == "fail":
            return False
        if self.large_k == "inconclusive":
            return None
        return True

    @property
    def first_violation(self) -> float | None:
        bad = np.flatnonzero(self.g < -1e-12)
        return float(self.k[bad[0]]) if bad.size else None


def check_butterfly_arbitrage(params: SviParams, k_grid=None) -> ButterflyReport:
    """Evaluate g on a grid and decide the d1 -> -inf condition from the right-wing slope.

    For SVI, omega ~ s k as k -> inf with s = b (1 + rho), so
    d1 ~ sqrt(k) (sqrt(s)/2 - 1/sqrt(s)) tends to -inf exactly when s < 2.
    s = 2 depends on lower-order terms and is reported as inconclusive.
    """
    k = np.linspace(-3.0, 3.0, 1201) if k_grid is None else np.asarray(k_grid, dtype=float)
    g = params.g(k)
    s = params.right_wing_slope
    if abs(s - 2.0) <= 1e-12:
        status = "inconclusive"
    else:
        status = "pass" if s < 2.0 else "fail"
    return ButterflyReport(k=k, g=g, min_g=float(np.min(g)), large_k=status)


@dataclass(frozen=True)
class SviFit:
    params: SviParams
    loss: float
    butterfly: ButterflyReport
    max_abs_residual: float

    @property
    def arbitrage_in_fit(self) -> bool:
        return self.butterfly.ok is not True


def _l1_loss(theta, k, w):
    a, b, rho, m, xi = theta
    penalty = 0.0
    if b < 0 or abs(rho) >= 1 or xi <= 0:
        return 1e6
    floor = a + b * xi * math.sqrt(1 - rho * rho)
    if floor < 0:
        penalty = 1e3 * (-floor)
    return float(np.sum(np.abs(svi_total_variance(theta, k) - w))) + penalty


def fit_svi(k, omega, maturity=None, n_starts: int = 16, seed: int = 0) -> SviFit:
    """Fit an SVI slice by minimising the sum of absolute deviations.

    Each of ``n_starts`` random starting points is first moved by a bounded
    least-squares solve (smooth, so it converges reliably) and then polished on
    the absolute-deviation loss.  The best polished point wins.
    """
    k = np.asarray(k, dtype=float)
    w = np.asarray(omega, dtype=float)
    if k.shape != w.shape or k.ndim != 1:
        raise ValidationError("k and omega must be 1-d arrays of equal length")
    if k.size < 5:
        raise InsufficientData("an SVI slice needs at least 5 points")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("total variance must be finite and non-negative")

    rng = np.random.default_rng(seed)
    span = max(k.max() - k.min(), 1e-3)
    w_scale = max(w.max(), 1e-8)
    lb = [-w_scale, 0.0, -0.999, k.min() - span, 1e-6]
    ub = [w_scale * 2, 10.0 * w_scale / span + 1.0, 0.999, k.max() + span, 2.0 * span + 1.0]

    starts = [np.array([w.min(), 0.0, 0.0, float(k[np.argmin(w)]), 0.1 * span])]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(lb, ub))

    best_theta, best_loss = None, math.inf
    for theta0 in starts:
        theta0 = np.clip(theta0, lb, ub)
        ls = least_squares(lambda th: svi_total_variance(th, k) - w, theta0, bounds=(lb, ub), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        theta = ls.x
        loss = _l1_loss(theta, k, w)
        polished = minimize(
            _l1_loss,
            theta,
            args=(k, w),
            method="Nelder-Mead",
            bounds=list(zip(lb, ub)),
            options=dict(xatol=1e-13, fatol=1e-15, maxiter=4000, maxfev=8000),
        )
        if polished.fun < loss:
            theta, loss = polished.x, polished.fun
        if loss < best_loss:
            best_theta, best_loss = theta, loss

    a, b, rho, m, xi = best_theta
    b = max(b, 0.0)
    rho = float(np.clip(rho, -0.999999, 0.999999))
    xi = max(xi, 1e-12)
    a = max(a, -b * xi * math.sqrt(1 - rho * rho))
    params = SviParams(float(a), float(b), rho, float(m), float(xi), maturity)
    k_check = np.linspace(min(k.min(), -1.0) - 1.0, max(k.max(), 1.0) + 1.0, 801)
    resid = params.total_variance(k) - w
    return SviFit(
        params=params,
        loss=float(np.sum(np.abs(resid))),
        butterfly=check_butterfly_arbitrage(params, k_check),
        max_abs_residual=float(np.max(np.abs(resid))),
    )


# --------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class SurfaceGrid:
    """Total implied variance on a (maturity, log-moneyness) grid with optional SVI slices."""

    maturities: np.ndarray
    log_moneyness: np.ndarray
    omega: np.ndarray
    slices: tuple = ()
    spot: float = 1.0
    rate: float = 0.0
    dividend_yield: float = 0.0

    def __post_init__(self):
        T = np.asarray(self.maturities, dtype=float)
        k = np.asarray(self.log_moneyness, dtype=float)
        w = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "maturities", T)
        object.__setattr__(self, "log_moneyness", k)
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "slices", tuple(self.slices))
        if w.shape != (T.size, k.size):
            raise ValidationError("omega must have shape (len(maturities), len(log_moneyness))")
        if np.any(np.diff(T) <= 0) or np.any(np.diff(k) <= 0) or np.any(T <= 0):
            raise ValidationError("grid axes must be strictly increasing with positive maturities")
        if np.any(w < 0):
            raise ValidationError("total variance must be non-negative")
        if self.slices and len(self.slices) != T.size:
            raise ValidationError("one SVI slice per maturity is required")

    @classmethod
    def from_slices(cls, slices: Sequence[SviParams], maturities, log_moneyness, spot=1.0, rate=0.0, dividend_yield=0.0):
        k = np.asarray(log_moneyness, dtype=float)
        omega = np.vstack([s.total_variance(k) for s in slices])
        return cls(np.asarray(maturities, float), k, omega, tuple(slices), spot, rate, dividend_yield)

    def forward(self, T):
        return self.spot * np.exp((self.rate - self.dividend_yield) * np.asarray(T))

    def strikes(self):
        """Strike grid K[i, j] = F(T_i) exp(k_j)."""
        return self.forward(self.maturities)[:, None] * np.exp(self.log_moneyness)[None, :]


@dataclass(frozen=True)
class CalendarReport:
    passed: np.ndarray  # shape (n_T - 1, n_k): slice i+1 above slice i at each k

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))

    def failing_k(self, log_moneyness):
        return np.asarray(log_moneyness)[~np.all(self.passed, axis=0)]


def check_calendar_arbitrage(surface: SurfaceGrid, tol: float = 1e-12) -> CalendarReport:
    """Total variance must not decrease with maturity at fixed log-moneyness."""
    return CalendarReport(passed=np.diff(surface.omega, axis=0) >= -tol)


@dataclass(frozen=True)
class LocalVolGrid:
    maturities: np.ndarray
    strikes: np.ndarray  # shape (n_T, n_k)
    sigma: np.ndarray  # NaN where the formula is undefined
    reason: np.ndarray  # "" where valid, else why it is NaN

    def rows(self):
        for i, T in enumerate(self.maturities):
            for j in range(self.strikes.shape[1]):
                yield float(T), float(self.strikes[i, j]), float(self.sigma[i, j])


def _omega_derivatives(surface: SurfaceGrid):
    T, k = surface.maturities, surface.log_moneyness
    if surface.slices:
        w = np.vstack([s.total_variance(k) for s in surface.slices])
        wk = np.vstack([s.d_k(k) for s in surface.slices])
        wkk = np.vstack([s.d_kk(k) for s in surface.slices])
    else:
        w = surface.omega
        wk = np.gradient(w, k, axis=1, edge_order=2)
        wkk = np.gradient(wk, k, axis=1, edge_order=2)
    if T.size == 1:
        wT = w / T[0]
    else:
        wT = np.gradient(w, T, axis=0, edge_order=1)
    return w, wk, wkk, wT


def dupire_local_vol(surface: SurfaceGrid, check_arbitrage: bool = True) -> LocalVolGrid:
    """Local volatility on the surface grid from total-variance derivatives.

    k-derivatives come from the SVI slices when present (finite differences
    otherwise); the T-derivative is a central difference across slices,
    one-sided at the ends.  Points with a non-positive denominator or negative
    omega_T are set to NaN with a reason rather than clipped.
    """
    if check_arbitrage:
        cal = check_calendar_arbitrage(surface)
        if not cal.ok:
            raise ArbitrageViolation(
                f"calendar arbitrage at k = {cal.failing_k(surface.log_moneyness)[:5]}"
            )
        for s in surface.slices:
            rep = check_butterfly_arbitrage(s, surface.log_moneyness)
            if rep.ok is False:
                raise ArbitrageViolation(f"butterfly arbitrage in slice T={s.maturity}")
    k = surface.log_moneyness[None, :]
    w, wk, wkk, wT = _omega_derivatives(surface)
    denom = local_vol_denominator(k, w, wk, wkk)
    reason = np.full(w.shape, "", dtype=object)
    reason[denom <= 0] = "non-positive denominator"
    reason[(denom > 0) & (wT < 0)] = "negative omega_T"
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma = np.sqrt(wT / denom)
    sigma[reason != ""] = np.nan
    return LocalVolGrid(surface.maturities, surface.strikes(), sigma, reason)


def local_vol_function(surface: SurfaceGrid) -> Callable[[float, np.ndarray], np.ndarray]:
    """sigma_loc(t, S) from SVI slices with total variance linear in T between slices.

    Before the first slice omega is interpolated linearly from omega(0, k) = 0;
    beyond the last slice the last segment is extended.
    """
    if not surface.slices:
        raise ValidationError("a continuous local-vol function needs SVI slices")
    T = np.concatenate([[0.0], surface.maturities])
    slices = surface.slices

    def parts(i, k):
        if i == 0:
            z = np.zeros_like(k)
            return z, z, z
        s = slices[i - 1]
        return s.total_variance(k), s.d_k(k), s.d_kk(k)

    def sigma(t, spot):
        spot = np.asarray(spot, dtype=float)
        i = int(np.clip(np.searchsorted(T, t, side="right") - 1, 0, T.size - 2))
        t0, t1 = T[i], T[i + 1]
        lam = (t - t0) / (t1 - t0)
        k = np.log(spot / surface.forward(t)) if t > 0 else np.log(spot / surface.spot)
        w0, wk0, wkk0 = parts(i, k)
        w1, wk1, wkk1 = parts(i + 1, k)
        w = (1 - lam) * w0 + lam * w1
        wk = (1 - lam) * wk0 + lam * wk1
        wkk = (1 - lam) * wkk0 + lam * wkk1
        wT = (w1 - w0) / (t1 - t0)
        if i == 0 and t < 1e-12:
            return np.sqrt(np.maximum(wT, 0.0))
        denom = local_vol_denominator(k, np.maximum(w, 1e-300), wk, wkk)
        return np.sqrt(np.maximum(wT, 0.0) / np.maximum(denom, 1e-8))

    return sigma


# --------------------------------------------------------------------------
# option-chain I/O


@dataclass(frozen=True)
class QuoteRow:
    strike: float
    maturity: float
    kind: OptionKind
    quote_type: str  # "price" or "vol"
    quote: float

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind.parse(self.kind))
        if self.strike <= 0 or self.maturity <= 0:
            raise ValidationError("strike and maturity must be positive")
        if self.quote_type not in ("price", "vol"):
            raise ValidationError("quote_type must be 'price' or 'vol'")


def load_option_chain(path) -> list[QuoteRow]:
    """Read ``strike,maturity,kind,quote_type,quote`` rows (header required)."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"strike", "maturity", "kind", "quote_type", "quote"}
        if reader.fieldnames is None or not expected <= set(reader.fieldnames):
            raise ValidationError(f"option chain needs columns {sorted(expected)}")
        rows = []
        for line in reader:
            try:
                rows.append(
                    QuoteRow(
                        float(line["strike"]),
                        float(line["maturity"]),
                        line["kind"],
                        line["quote_type"].strip().lower(),
                        float(line["quote"]),
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"bad option-chain row {line}: {exc}") from None
    return rows


def surface_from_quotes(
    quotes: Iterable[QuoteRow], spot, rate, dividend_yield=0.0, k_grid=None, seed: int = 0
) -> tuple[SurfaceGrid, list[SviFit]]:
    """Invert quotes to total variance, fit one SVI slice per maturity and grid the result."""
    by_T: dict[float, list[tuple[float, float]]] = {}
    for q in quotes:
        if q.quote_type == "vol":
            vol = q.quote
        else:
            vol = implied_vol(q.quote, spot, q.strike, rate, q.maturity, q.kind, dividend_yield)
        fwd = spot * math.exp((rate - dividend_yield) * q.maturity)
        by_T.setdefault(q.maturity, []).append((math.log(q.strike / fwd), vol * vol * q.maturity))
    maturities = sorted(by_T)
    fits = []
    for T in maturities:
        pts = sorted(by_T[T])
        k, w = np.array([p[0] for p in pts]), np.array([p[1] for p in pts])
        fits.append(fit_svi(k, w, maturity=T, seed=seed))
    if k_grid is None:
        all_k = np.concatenate([[p[0] for p in by_T[T]] for T in maturities])
        k_grid = np.linspace(all_k.min(), all_k.max(), 41)
    surface = SurfaceGrid.from_slices([f.params for f in fits], maturities, k_grid, spot, rate, dividend_yield)
    return surface, fits


def surface_rows(surface: SurfaceGrid):
    """Rows ``T,k,omega,a,b,rho,m,xi`` for the surface CSV."""
    for i, T in enumerate(surface.maturities):
        theta = surface.slices[i].as_tuple() if surface.slices else (math.nan,) * 5
        for j, k in enumerate(surface.log_moneyness):
            yield (float(T), float(k), float(surface.omega[i, j]), *theta)
