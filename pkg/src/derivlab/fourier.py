"""Characteristic functions and Fourier-inversion pricing.

Three models expose phi_T(u) = E^Q exp(iu log S_T): geometric Brownian motion,
Heston and Merton's jump diffusion.  Prices come either from Gil-Pelaez
inversion (probabilities Pi1, Pi2) or from Lewis' contour integral of the
payoff transform against phi.  All half-line integrals use composite
Gauss-Legendre quadrature with a node-doubling convergence test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (
    BranchCutWarning,
    DomainError,
    NumericOverflow,
    QuadratureNotConverged,
    StripViolation,
)


def _clog1p(z):
    """log(1 + z) for complex z, accurate when |z| is tiny (numpy's is not)."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    return 0.5 * np.log1p(2 * x + x * x + y * y) + 1j * np.arctan2(y, 1 + x)


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Gbm:
    spot: float
    rate: float
    sigma: float
    maturity: float

    def __post_init__(self):
        _check_common(self)
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")

    def char_fn(self, u):
        u = np.asarray(u, dtype=complex)
        T, s = self.maturity, self.sigma
        mean = math.log(self.spot) + (self.rate - 0.5 * s * s) * T
        return _finite(np.exp(1j * u * mean - 0.5 * s * s * T * u * u))


@dataclass(frozen=True)
class Heston:
    """Heston model under Q: variance X mean-reverts to x_bar at speed kappa with vol-of-vol gamma."""

    spot: float
    rate: float
    maturity: float
    kappa: float
    x_bar: float
    gamma: float
    rho: float
    x0: float

    def __post_init__(self):
        _check_common(self)
        if self.kappa < 0 or self.x_bar < 0 or self.x0 < 0:
            raise DomainError("kappa, x_bar and x0 must be non-negative")
        if self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError("rho must lie in [-1, 1]")

    @property
    def feller(self) -> bool:
        """gamma^2 <= 2 kappa x_bar: the variance process stays positive."""
        return self.gamma**2 <= 2.0 * self.kappa * self.x_bar

    def integrated_variance(self) -> float:
        """E int_0^T X_t dt."""
        k, T = self.kappa, self.maturity
        if k * T < 1e-12:
            return self.x0 * T
        return self.x_bar * T + (self.x0 - self.x_bar) * (-math.expm1(-k * T)) / k

    def phi_j(self, u, j: int, check_branch: bool = False):
        """The two affine transforms of the explicit formula.

        j = 2 is the characteristic function of log S_T; j = 1 is the same
        transform under the share measure, phi(u - i) / phi(-i).
        """
        u = np.asarray(u, dtype=complex)
        c, b = (0.5, self.kappa - self.rho * self.gamma) if j == 1 else (-0.5, self.kappa)
        g2 = self.gamma**2
        T = self.maturity
        beta = b - self.rho * self.gamma * 1j * u
        q = 2 * c * 1j * u - u * u
        d = np.sqrt(beta * beta - g2 * q)
        # the transform is even in d; take the other root where beta + d vanishes
        d = np.where(np.abs(beta + d) < 1e-8 * (np.abs(beta) + 1e-300), -d, d)
        # beta - d written without cancellation so that gamma -> 0 stays accurate
        n_over_g2 = q / (beta + d)
        g = g2 * n_over_g2 / (beta + d)
        e = np.exp(-d * T)
        log_ratio = _clog1p(-g * e) - _clog1p(-g)
        if check_branch:
            _check_log_continuity((1 - g * e) / (1 - g))
        A = self.kappa * self.x_bar * (n_over_g2 * T - 2.0 * log_ratio / g2)
        B = n_over_g2 * (-np.expm1(-d * T)) / (1 - g * e)
        return _finite(np.exp(A + B * self.x0 + 1j * u * (math.log(self.spot) + self.rate * T)))

    def char_fn(self, u):
        return self.phi_j(u, 2)


@dataclass(frozen=True)
class MertonJd:
    """Lognormal diffusion plus compound-Poisson normal jumps in log price."""

    spot: float
    rate: float
    maturity: float
    sigma: float
    lam: float
    mu_j: float
    sigma_j: float

    def __post_init__(self):
        _check_common(self)
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        if self.lam < 0 or self.sigma_j < 0:
            raise DomainError("jump intensity and jump volatility must be non-negative")

    @property
    def compensator(self) -> float:
        return self.lam * math.expm1(self.mu_j + 0.5 * self.sigma_j**2)

    def char_fn(self, u):
        u = np.asarray(u, dtype=complex)
        T, s = self.maturity, self.sigma
        drift = math.log(self.spot) + (self.rate - self.compensator - 0.5 * s * s) * T
        jumps = self.lam * T * np.expm1(1j * u * self.mu_j - 0.5 * self.sigma_j**2 * u * u)
        return _finite(np.exp(1j * u * drift - 0.5 * s * s * T * u * u + jumps))


CharFnModel = Gbm | Heston | MertonJd


def _check_common(model):
    if model.spot <= 0:
        raise DomainError("spot must be positive")
    if model.maturity <= 0:
        raise DomainError("maturity must be positive")


def _finite(values):
    if not np.all(np.isfinite(values)):
        raise NumericOverflow("characteristic function overflowed; |u| or Im(u) is too large for this model")
    return values


def _check_log_continuity(arg):
    """Warn if the argument of a complex log jumps across the negative real axis between nodes."""
    arg = np.ravel(arg)
    if arg.size < 2:
        return
    crosses = (arg.real[:-1] < 0) & (arg.real[1:] < 0) & (np.sign(arg.imag[:-1]) != np.sign(arg.imag[1:]))
    if np.any(crosses):
        warnings.warn("complex logarithm argument crosses the branch cut between quadrature nodes", BranchCutWarning, stacklevel=3)


def char_fn(model: CharFnModel, u):
    return model.char_fn(u)


def levy_khintchine_char_fn(model: MertonJd, u):
    """Merton characteristic function from the Levy-Khintchine triplet by direct quadrature.

    The jump part is integrated against the Gaussian intensity measure with the
    small-jump truncation 1{|x| < 1}; the drift therefore carries the matching
    term lam * E[J 1{|J| < 1}] so that the law is unchanged.
    """
    mu, sj, lam, T, s = model.mu_j, model.sigma_j, model.lam, model.maturity, model.sigma
    if sj <= 0:
        raise DomainError("direct evaluation needs a jump law with positive variance")

    def density(x):
        return math.exp(-0.5 * ((x - mu) / sj) ** 2) / (sj * math.sqrt(2 * math.pi))

    lo, hi = mu - 40 * sj, mu + 40 * sj
    points = [p for p in (-1.0, 1.0) if lo < p < hi]
    truncated_mean, _ = integrate.quad(lambda x: x * density(x), max(lo, -1.0), min(hi, 1.0), epsabs=1e-14, epsrel=1e-13)
    gamma_drift = model.rate - model.compensator - 0.5 * s * s + lam * truncated_mean
    out = []
    for ui in np.atleast_1d(np.asarray(u, dtype=float)):
        def re(x):
            return (math.cos(ui * x) - 1.0) * density(x)

        def im(x):
            return (math.sin(ui * x) - (ui * x if abs(x) < 1 else 0.0)) * density(x)

        kw = dict(points=points, limit=400, epsabs=1e-14, epsrel=1e-13)
        jump = lam * (integrate.quad(re, lo, hi, **kw)[0] + 1j * integrate.quad(im, lo, hi, **kw)[0])
        exponent = 1j * ui * (math.log(model.spot) + gamma_drift * T) - 0.5 * s * s * ui * ui * T + T * jump
        out.append(np.exp(exponent))
    return np.array(out)


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Gauss-Legendre on (0, upper] with geometrically growing panels."""

    nodes: int = 256
    upper: float = 200.0
    tol: float = 1e-9
    max_doublings: int = 4

    def __post_init__(self):
        if self.nodes < 32:
            raise DomainError("at least 32 quadrature nodes are required")
        if self.upper < 50:
            raise DomainError("truncation bound must be at least 50")


def _panels(upper):
    edges = [0.0, 0.5]
    while edges[-1] * 2 < upper:
        edges.append(edges[-1] * 2)
    edges.append(upper)
    return np.array(edges)


def _nodes_weights(upper, total_nodes):
    edges = _panels(upper)
    per = max(int(math.ceil(total_nodes / (edges.size - 1))), 4)
    x, w = np.polynomial.legendre.leggauss(per)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def integrate_half_line(f: Callable[[np.ndarray], np.ndarray], config: QuadratureConfig = QuadratureConfig()):
    """Integral of f over (0, inf), truncated where f has decayed.

    The truncation bound starts at ``config.upper`` and doubles while the
    integrand at the bound is still above 1e-13.  The node count then doubles
    until two successive estimates agree to ``config.tol``.
    """
    upper = config.upper
    while np.max(np.abs(f(np.array([upper, 0.9 * upper])))) > 1e-13:
        upper *= 2
        if upper > 1e5:
            raise QuadratureNotConverged("integrand does not decay; cannot truncate the half line")
    n = config.nodes
    u, w = _nodes_weights(upper, n)
    prev = float(np.dot(w, f(u)))
    for _ in range(config.max_doublings):
        n *= 2
        u, w = _nodes_weights(upper, n)
        cur = float(np.dot(w, f(u)))
        if abs(cur - prev) <= config.tol:
            return cur
        prev = cur
    raise QuadratureNotConverged(f"quadrature changed by {abs(cur - prev):.3g} after doubling to {n} nodes")


# --------------------------------------------------------------------------
# Gil-Pelaez


def gil_pelaez_cdf(model: CharFnModel, s, config: QuadratureConfig = QuadratureConfig()) -> float:
    """Q(log S_T <= s) = 1/2 - (1/pi) int_0^inf Re[e^{-ius} phi(u) / (iu)] du."""

    def f(u):
        return np.real(np.exp(-1j * u * s) * model.char_fn(u) / (1j * u))

    return 0.5 - integrate_half_line(f, config) / math.pi


def _exercise_probabilities(model: CharFnModel, strike, config, phi1=None, phi2=None):
    log_k = math.log(strike)
    phi2 = phi2 or model.char_fn
    if phi1 is None:
        forward = model.char_fn(-1j)

        def phi1(u):
            return model.char_fn(u - 1j) / forward

    def integrand(phi):
        return lambda u: np.real(np.exp(-1j * u * log_k) * phi(u) / (1j * u))

    pi1 = 0.5 + integrate_half_line(integrand(phi1), config) / math.pi
    pi2 = 0.5 + integrate_half_line(integrand(phi2), config) / math.pi
    return pi1, pi2


def price_call_gil_pelaez(model: CharFnModel, strike: float, config: QuadratureConfig = QuadratureConfig()):
    """European call S0 Pi1 - K e^{-rT} Pi2; returns (price, Pi1, Pi2)."""
    if strike <= 0:
        raise DomainError("strike must be positive")
    pi1, pi2 = _exercise_probabilities(model, strike, config)
    price = model.spot * pi1 - strike * math.exp(-model.rate * model.maturity) * pi2
    return price, pi1, pi2


def heston_explicit_price(model: Heston, strike: float, config: QuadratureConfig = QuadratureConfig()) -> float:
    """Heston call from the two closed-form affine transforms phi^1 and phi^2."""
    if not isinstance(model, Heston):
        raise DomainError("heston_explicit_price needs a Heston model")
    if strike <= 0:
        raise DomainError("strike must be positive")
    u, _ = _nodes_weights(config.upper, config.nodes)
    model.phi_j(np.sort(u), 1, check_branch=True)
    model.phi_j(np.sort(u), 2, check_branch=True)
    pi1, pi2 = _exercise_probabilities(
        model, strike, config, phi1=lambda v: model.phi_j(v, 1), phi2=lambda v: model.phi_j(v, 2)
    )
    return model.spot * pi1 - strike * math.exp(-model.rate * model.maturity) * pi2


def put_from_call(call_price, model: CharFnModel, strike):
    return call_price - model.spot + strike * math.exp(-model.rate * model.maturity)


# --------------------------------------------------------------------------
# Lewis payoff transforms


@dataclass(frozen=True)
class PayoffTransform:
    """Transform psi_hat(u) = int e^{ius} psi(s) ds, valid for Im(u) in the open strip."""

    name: str
    transform: Callable[[np.ndarray, float], np.ndarray]
    strip: tuple[float, float]
    default_contour: float

    def contains(self, z: float) -> bool:
        lo, hi = self.strip
        return lo < z < hi


def _kpow(strike, w):
    return np.exp(w * math.log(strike))


PAYOFFS = {
    "call": PayoffTransform("call", lambda u, K: -_kpow(K, 1j * u + 1) / (u * u - 1j * u), (1.0, math.inf), 1.5),
    "put": PayoffTransform("put", lambda u, K: -_kpow(K, 1j * u + 1) / (u * u - 1j * u), (-math.inf, 0.0), -0.5),
    "covered-call": PayoffTransform("covered-call", lambda u, K: _kpow(K, 1j * u + 1) / (u * u - 1j * u), (0.0, 1.0), 0.5),
    "cash-or-nothing-call": PayoffTransform("cash-or-nothing-call", lambda u, K: -_kpow(K, 1j * u) / (1j * u), (0.0, math.inf), 0.5),
    "cash-or-nothing-put": PayoffTransform("cash-or-nothing-put", lambda u, K: _kpow(K, 1j * u) / (1j * u), (-math.inf, 0.0), -0.5),
    "asset-or-nothing-call": PayoffTransform("asset-or-nothing-call", lambda u, K: -_kpow(K, 1j * u + 1) / (1j * u + 1), (1.0, math.inf), 1.5),
    "asset-or-nothing-put": PayoffTransform("asset-or-nothing-put", lambda u, K: _kpow(K, 1j * u + 1) / (1j * u + 1), (-math.inf, 0.0), -0.5),
    "arrow-debreu": PayoffTransform("arrow-debreu", lambda u, K: _kpow(K, 1j * u), (-math.inf, math.inf), 0.0),
}

PAYOFF_FUNCTIONS = {
    "call": lambda s, K: np.maximum(np.exp(s) - K, 0.0),
    "put": lambda s, K: np.maximum(K - np.exp(s), 0.0),
    "covered-call": lambda s, K: np.minimum(np.exp(s), K),
    "cash-or-nothing-call": lambda s, K: (np.exp(s) >= K).astype(float),
    "cash-or-nothing-put": lambda s, K: (np.exp(s) <= K).astype(float),
    "asset-or-nothing-call": lambda s, K: np.exp(s) * (np.exp(s) >= K),
    "asset-or-nothing-put": lambda s, K: np.exp(s) * (np.exp(s) <= K),
}


def price_lewis(
    model: CharFnModel,
    payoff: PayoffTransform | str,
    strike: float,
    contour_z: float | None = None,
    config: QuadratureConfig = QuadratureConfig(),
) -> float:
    """Discounted E^Q psi(log S_T) = e^{-rT} (1/pi) int_0^inf Re[psi_hat(x + iz) phi(-x - iz)] dx.

    For the Arrow-Debreu row this is the discounted density of log S_T at log K.
    """
    if isinstance(payoff, str):
        try:
            payoff = PAYOFFS[payoff]
        except KeyError:
            raise DomainError(f"unknown payoff {payoff!r}; choose from {sorted(PAYOFFS)}") from None
    if strike <= 0:
        raise DomainError("strike must be positive")
    z = payoff.default_contour if contour_z is None else float(contour_z)
    if not payoff.contains(z):
        raise StripViolation(f"contour Im(u) = {z} lies outside the {payoff.name} strip {payoff.strip}")
    try:
        moment = model.char_fn(np.array([-1j * z]))[0]
    except NumericOverflow:
        moment = math.nan
    if not (np.isfinite(moment) and moment.real > 0):
        raise StripViolation(f"E S_T^{z} is not finite for this model; choose a contour closer to [0, 1]")

    def f(x):
        u = x + 1j * z
        return np.real(payoff.transform(u, strike) * model.char_fn(-u))

    return math.exp(-model.rate * model.maturity) * integrate_half_line(f, config) / math.pi
