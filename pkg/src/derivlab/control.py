"""Optimal investment and consumption: closed forms, Riccati solutions and HJB checks.

Every solver returns a :class:`ControlSolution` whose value function can be
plugged back into its HJB equation with :func:`hjb_residual`.  Derivatives
there are taken by sixth-order central differences, so the check does not
reuse any algebra from the solvers.

Time-dependent coefficients are parameterised by time to horizon tau = T - t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, HorizonBeyondBlowup, NoLinearizingExponent, RiccatiBlowup


@dataclass(frozen=True)
class MertonSpec:
    mu: float
    r: float
    sigma: float
    gamma: float = 1.0
    beta: float | None = None
    horizon: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")


@dataclass(frozen=True)
class StochReturnsSpec:
    """Returns Y follow dY = -kappa Y dt + beta dB; the asset is dS/S = Y dt + sigma dW."""

    kappa: float
    beta_vol: float
    sigma: float
    rho: float
    gamma: float
    horizon: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.beta_vol > 0 and self.kappa > 0):
            raise DomainError("sigma, beta_vol and kappa must be positive")
        if not -1 < self.rho < 1:
            raise DomainError("rho must lie in (-1, 1)")
        if not self.gamma > 0 or self.gamma == 1:
            raise DomainError("gamma must be positive and different from 1")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")


@dataclass(frozen=True)
class AffineHestonSpec:
    """Futures with dF/F = mu Y dt + sqrt(Y) dW and dY = kappa (y_bar - Y) dt + beta sqrt(Y) dB."""

    kappa: float
    y_bar: float
    beta_vol: float
    rho: float
    mu: float
    gamma: float
    r: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise DomainError("rho must lie in (-1, 1)")
        if not (self.gamma > 0 and self.horizon > 0 and self.kappa >= 0 and self.beta_vol >= 0):
            raise DomainError("gamma and horizon must be positive; kappa and beta_vol non-negative")

    @property
    def feller(self) -> bool:
        return self.beta_vol**2 <= 2 * self.kappa * self.y_bar


@dataclass
class ControlSolution:
    """Optimal controls and value function of one problem.

    Callables take (t, x, y); ``y`` is ignored by single-factor problems.
    ``hamiltonian(t, x, y, pi, c)`` evaluates the expression inside the HJB
    maximum for given controls, using numerical derivatives of ``value``.
    """

    problem: str
    horizon: float
    allocation: Callable
    value: Callable
    certainty_equivalent: Callable
    hamiltonian: Callable
    consumption: Callable | None = None
    coefficients: dict = field(default_factory=dict)
    blowup_time: float | None = None

    def coefficient_rows(self, n: int = 101):
        """(t, a, b) rows on a uniform grid, for the coefficient CSV."""
        a, b = self.coefficients.get("a"), self.coefficients.get("b")
        for t in np.linspace(0.0, self.horizon, n):
            tau = self.horizon - t
            yield float(t), (float(a(tau)) if a else math.nan), (float(b(tau)) if b else math.nan)


# numerical derivatives -----------------------------------------------------

_W1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
_W2 = np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0
_OFF = np.arange(-3, 4)


def _d1(f, x, h):
    return sum(w * f(x + k * h) for w, k in zip(_W1, _OFF) if w) / h


def _d2(f, x, h):
    return sum(w * f(x + k * h) for w, k in zip(_W2, _OFF)) / (h * h)


def _partials(value, t, x, y, need_y):
    ht = 1e-3
    hx = 1e-3 * max(abs(x), 1.0)
    out = {
        "V": value(t, x, y),
        "t": _d1(lambda s: value(s, x, y), t, ht),
        "x": _d1(lambda s: value(t, s, y), x, hx),
        "xx": _d2(lambda s: value(t, s, y), x, hx),
    }
    if need_y:
        hy = 1e-3 * max(abs(y), 1e-1)
        out["y"] = _d1(lambda s: value(t, x, s), y, hy)
        out["yy"] = _d2(lambda s: value(t, x, s), y, hy)
        out["xy"] = _d1(lambda s: _d1(lambda u: value(t, u, s), x, hx), y, hy)
    return out


def hjb_residual(solution: ControlSolution, t_grid, x_grid, y_grid=(None,)) -> float:
    """max |HJB expression| at the returned optimal controls over the grid."""
    worst = 0.0
    for t in t_grid:
        for x in x_grid:
            for y in y_grid:
                pi = solution.allocation(t, x, y)
                c = solution.consumption(t, x, y) if solution.consumption else 0.0
                worst = max(worst, abs(solution.hamiltonian(t, x, y, pi, c)))
    return worst


def optimality_gap(solution: ControlSolution, t, x, y=None, bump: float = 1e-3) -> float:
    """Smallest drop of the HJB expression when pi is bumped by +-bump; positive at a strict maximum."""
    pi = solution.allocation(t, x, y)
    c = solution.consumption(t, x, y) if solution.consumption else 0.0
    base = solution.hamiltonian(t, x, y, pi, c)
    return min(base - solution.hamiltonian(t, x, y, pi + s * bump, c) for s in (-1.0, 1.0))


def _wealth_hamiltonian(spec: MertonSpec, value, discount=0.0, running=None):
    mu, r, sigma = spec.mu, spec.r, spec.sigma

    def h(t, x, y, pi, c):
        d = _partials(value, t, x, y, need_y=False)
        out = d["t"] + 0.5 * sigma**2 * pi**2 * x**2 * d["xx"] + (r + pi * (mu - r) - c) * x * d["x"]
        if running is not None:
            out += running(c, x) - discount * d["V"]
        return out

    return h


# Merton problems -----------------------------------------------------------


def merton_log(spec: MertonSpec) -> ControlSolution:
    """Log utility of terminal wealth: constant allocation, no consumption."""
    mu, r, sigma, T = spec.mu, spec.r, spec.sigma, spec.horizon
    pi = (mu - r) / sigma**2
    growth = r + (mu - r) ** 2 / (2 * sigma**2)

    def value(t, x, y=None):
        return math.log(x) + growth * (T - t)

    return ControlSolution(
        problem="merton-log",
        horizon=T,
        allocation=lambda t, x, y=None: pi,
        value=value,
        certainty_equivalent=lambda t, x, y=None: x * math.exp((mu - r) ** 2 / (2 * sigma**2) * (T - t)),
        hamiltonian=_wealth_hamiltonian(spec, value),
        coefficients={"g": lambda tau: growth * tau},
    )


def merton_power(spec: MertonSpec) -> ControlSolution:
    """Power utility x^{1-gamma}/(1-gamma); value U(x) g(t)."""
    mu, r, sigma, gamma, T = spec.mu, spec.r, spec.sigma, spec.gamma, spec.horizon
    if gamma == 1:
        raise DomainError("gamma = 1 is log utility; use merton_log")
    pi = (mu - r) / (gamma * sigma**2)
    rate = r + (mu - r) ** 2 / (2 * gamma * sigma**2)

    def g(tau):
        return math.exp((1 - gamma) * tau * rate)

    def value(t, x, y=None):
        return x ** (1 - gamma) / (1 - gamma) * g(T - t)

    return ControlSolution(
        problem="merton-power",
        horizon=T,
        allocation=lambda t, x, y=None: pi,
        value=value,
        certainty_equivalent=lambda t, x, y=None: x * math.exp((T - t) * (mu - r) ** 2 / (2 * gamma * sigma**2)),
        hamiltonian=_wealth_hamiltonian(spec, value),
        coefficients={"g": g},
    )


@dataclass
class LogConsumption:
    a: float
    b: float
    allocation: float
    consumption_rate: float


def merton_log_consumption(spec: MertonSpec) -> ControlSolution:
    """Infinite-horizon discounted log utility of consumption c X; value a log x + b."""
    mu, r, sigma, beta = spec.mu, spec.r, spec.sigma, spec.beta
    if beta is None or not beta > 0:
        raise DomainError("the consumption problem needs a discount rate beta > 0")
    a = 1.0 / beta
    b = (mu - r) ** 2 / (2 * beta**2 * sigma**2) + r / beta**2 + (math.log(beta) - 1) / beta
    pi = (mu - r) / sigma**2

    def value(t, x, y=None):
        return a * math.log(x) + b

    h = _wealth_hamiltonian(spec, value, discount=beta, running=lambda c, x: math.log(c * x))
    return ControlSolution(
        problem="merton-log-consumption",
        horizon=math.inf,
        allocation=lambda t, x, y=None: pi,
        consumption=lambda t, x, y=None: 1.0 / a,
        value=value,
        # wealth that gives the same value when only the bank account is available
        certainty_equivalent=lambda t, x, y=None: x * math.exp((mu - r) ** 2 / (2 * beta * sigma**2)),
        hamiltonian=h,
        coefficients={"a": lambda tau: a, "b": lambda tau: b},
    )


# Riccati equations ---------------------------------------------------------


@dataclass(frozen=True)
class Riccati:
    """da/dtau = P a^2 + Q a + R with a(0) = 0, solved through the linearisation a = -w'/(P w).

    w'' - Q w' + P R w = 0 with w(0) = 1, w'(0) = 0; blowup happens at the first zero of w.
    """

    P: float
    Q: float
    R: float

    @property
    def discriminant(self) -> float:
        return self.Q**2 - 4 * self.P * self.R

    def roots(self):
        """Characteristic roots of the linear ODE for w (complex when the discriminant is negative)."""
        s = np.sqrt(complex(self.discriminant))
        return (self.Q + s) / 2, (self.Q - s) / 2

    @property
    def blowup_time(self) -> float | None:
        P, Q, R = self.P, self.Q, self.R
        if P == 0:
            return None
        disc = self.discriminant
        scale = Q * Q + abs(4 * P * R)
        if abs(disc) <= 1e-14 * scale:
            lam = Q / 2
            return 1 / lam if lam > 0 else None
        if disc < 0:
            d = math.sqrt(-disc) / 2
            return math.atan2(d, Q / 2) / d
        delta = math.sqrt(disc) / 2
        l1, l2 = Q / 2 + delta, Q / 2 - delta
        if l2 > 0:
            return math.log(l1 / l2) / (l1 - l2)
        return None

    def _check(self, tau):
        bt = self.blowup_time
        if bt is not None and np.any(np.asarray(tau) >= bt):
            raise HorizonBeyondBlowup(f"time to horizon {np.max(tau):.6g} reaches the blowup time {bt:.6g}")

    def a(self, tau):
        self._check(tau)
        tau = np.asarray(tau, dtype=float)
        P, Q, R = self.P, self.Q, self.R
        if P == 0:
            return R * tau if Q == 0 else R * np.expm1(Q * tau) / Q
        disc = self.discriminant
        if abs(disc) <= 1e-14 * (Q * Q + abs(4 * P * R)):
            lam = Q / 2
            return lam * lam * tau / (P * (1 - lam * tau))
        if disc < 0:
            d = math.sqrt(-disc) / 2
            sn, cs = np.sin(d * tau), np.cos(d * tau)
            return R * sn / (d * cs - Q / 2 * sn)
        delta = math.sqrt(disc) / 2
        l1, l2 = Q / 2 + delta, Q / 2 - delta
        E = np.exp((l2 - l1) * tau)
        return -l1 * l2 * (1 - E) / (P * (l2 - l1 * E))

    def integral(self, tau):
        """int_0^tau a(s) ds = -log w(tau) / P."""
        self._check(tau)
        tau = np.asarray(tau, dtype=float)
        P, Q, R = self.P, self.Q, self.R
        if P == 0:
            if Q == 0:
                return 0.5 * R * tau**2
            return R * (np.expm1(Q * tau) / Q - tau) / Q
        disc = self.discriminant
        if abs(disc) <= 1e-14 * (Q * Q + abs(4 * P * R)):
            lam = Q / 2
            return -(lam * tau + np.log1p(-lam * tau)) / P
        if disc < 0:
            d = math.sqrt(-disc) / 2
            log_w = Q / 2 * tau + np.log(np.cos(d * tau) - Q / (2 * d) * np.sin(d * tau))
            return -log_w / P
        delta = math.sqrt(disc) / 2
        l1, l2 = Q / 2 + delta, Q / 2 - delta
        E = np.exp((l2 - l1) * tau)
        log_w = l1 * tau + np.log((l2 - l1 * E) / (l2 - l1))
        return -log_w / P

    def integrate_numerically(self, tau_max, rtol=1e-12, atol=1e-14, cap=1e6):
        """Adaptive integration of the Riccati ODE; stops when |a| exceeds ``cap``.

        Returns (tau_end, solution object) where tau_end < tau_max signals divergence.
        """
        from scipy.integrate import solve_ivp

        def rhs(_, a):
            return self.P * a * a + self.Q * a + self.R

        def blow(_, a):
            return abs(a[0]) - cap

        blow.terminal = True
        sol = solve_ivp(rhs, (0.0, tau_max), [0.0], method="DOP853", rtol=rtol, atol=atol,
                        events=blow, dense_output=True)
        end = float(sol.t_events[0][0]) if sol.t_events[0].size else float(sol.t[-1])
        return end, sol


# stochastic returns --------------------------------------------------------


def stoch_returns_riccati(spec: StochReturnsSpec) -> Riccati:
    g, rho, b, s, k = spec.gamma, spec.rho, spec.beta_vol, spec.sigma, spec.kappa
    K = 1 + (1 - g) * rho**2 / g
    return Riccati(
        P=2 * b * b * K,
        Q=2 * (rho * b * (1 - g) / (s * g) - k),
        R=(1 - g) / (2 * s * s * g),
    )


def stoch_returns_roots(spec: StochReturnsSpec):
    """Roots m+- of the second-order ODE for v in calendar time (complex when the market blows up)."""
    g, rho, b, s, k = spec.gamma, spec.rho, spec.beta_vol, spec.sigma, spec.kappa
    c = -(rho * b * (1 - g) / (s * g) - k)
    root = np.sqrt(complex(k * k - b * (1 - g) / (s * g) * (2 * k * rho + b / s)))
    return c + root, c - root


def stoch_returns_solution(spec: StochReturnsSpec) -> ControlSolution:
    """Power utility with mean-reverting returns (zero long-run mean and zero rate).

    Value U(x) exp(a(tau) y^2 + b(tau)).  Raises HorizonBeyondBlowup when the
    horizon reaches the blowup time of a.
    """
    ric = stoch_returns_riccati(spec)
    T, g, b_vol, sigma, rho, kappa = spec.horizon, spec.gamma, spec.beta_vol, spec.sigma, spec.rho, spec.kappa
    bt = ric.blowup_time
    if bt is not None and T >= bt:
        raise HorizonBeyondBlowup(f"horizon {T:.6g} reaches the blowup time {bt:.6g}")

    def a(tau):
        return ric.a(tau)

    def b(tau):
        return b_vol**2 * ric.integral(tau)

    def value(t, x, y):
        tau = T - t
        return x ** (1 - g) / (1 - g) * math.exp(float(a(tau)) * y * y + float(b(tau)))

    def allocation(t, x, y):
        return y * (1 + 2 * rho * b_vol * sigma * float(a(T - t))) / (g * sigma**2)

    def hamiltonian(t, x, y, pi, c):
        d = _partials(value, t, x, y, need_y=True)
        return (
            d["t"] + 0.5 * b_vol**2 * d["yy"] - kappa * y * d["y"]
            + 0.5 * sigma**2 * x**2 * pi**2 * d["xx"] + pi * x * y * d["x"] + rho * pi * x * b_vol * sigma * d["xy"]
        )

    return ControlSolution(
        problem="stoch-returns",
        horizon=T,
        allocation=allocation,
        value=value,
        certainty_equivalent=lambda t, x, y: x * math.exp((float(a(T - t)) * y * y + float(b(T - t))) / (1 - g)),
        hamiltonian=hamiltonian,
        coefficients={"a": a, "b": b},
        blowup_time=bt,
    )


# exponential utility with stochastic volatility -----------------------------


@dataclass
class ExpUtilityTransform:
    """Linear PDE psi_t + diffusion psi_yy + drift psi_y - decay psi = 0 with g = psi^q."""

    q: float
    diffusion: Callable
    drift: Callable
    decay: Callable
    residuals: dict

    def g_constant(self, tau):
        """g(tau) when the factor is frozen (zero vol of vol): psi decays at a constant rate."""
        return np.exp(-self.q * self.decay(0.0) * np.asarray(tau))


def _test_function(t, y):
    # h and its derivatives; any smooth h with nonzero h_y exposes the quadratic term
    h = np.sin(2 * y) + t * y * y
    return h, y * y, 2 * np.cos(2 * y) + 2 * t * y, -4 * np.sin(2 * y) + 2 * t


def _distortion_residual(q, alpha, beta, sigma, excess, rho, t, y):
    h, ht, hy, hyy = _test_function(t, y)
    al, be, si, m = alpha(y), beta(y), sigma(y), excess(y)
    g = np.exp(q * h)
    g_t, g_y, g_yy = q * ht * g, q * hy * g, (q * hyy + (q * hy) ** 2) * g
    nonlinear = g_t + 0.5 * be**2 * g_yy + al * g_y - 0.5 * si**2 * (m / si**2 + rho * be / si * g_y / g) ** 2 * g
    psi = np.exp(h)
    linear = (ht + 0.5 * be**2 * (hyy + hy * hy) + (al - rho * m * be / si) * hy - m * m / (2 * q * si * si)) * psi
    # relative to g so that the size of the test function does not matter
    return float(np.max(np.abs(nonlinear - q * psi ** (q - 1) * linear) / g))


def exp_utility_sv_transform(alpha, beta, sigma, excess_return, rho, y_grid=None, tol=1e-8) -> ExpUtilityTransform:
    """Find the power q for which g = psi^q turns the exponential-utility HJB into a linear PDE.

    ``alpha``, ``beta``, ``sigma`` and ``excess_return`` are vectorised functions
    of the factor y (drift and vol of the factor, asset vol, expected excess
    return).  Both candidate exponents 1/(1+rho^2) and 1/(1-rho^2) are tried by
    substituting psi^q into the nonlinear equation for a test psi; the one with
    residual (relative to g) below ``tol`` is kept.
    """
    if not -1 < rho < 1:
        raise DomainError("rho must lie in (-1, 1)")
    y = np.linspace(0.05, 2.0, 50) if y_grid is None else np.asarray(y_grid, dtype=float)
    T, Y = np.meshgrid(np.linspace(0.0, 1.0, 50), y, indexing="ij")
    candidates = {"1/(1+rho^2)": 1 / (1 + rho**2), "1/(1-rho^2)": 1 / (1 - rho**2)}
    residuals = {name: _distortion_residual(q, alpha, beta, sigma, excess_return, rho, T, Y)
                 for name, q in candidates.items()}
    passing = [name for name, res in residuals.items() if res <= tol]
    if not passing:
        raise NoLinearizingExponent(f"no candidate exponent linearises the equation: {residuals}")
    q = candidates[passing[-1]]
    return ExpUtilityTransform(
        q=q,
        diffusion=lambda yy: 0.5 * beta(yy) ** 2,
        drift=lambda yy: alpha(yy) - rho * excess_return(yy) * beta(yy) / sigma(yy),
        decay=lambda yy: excess_return(yy) ** 2 / (2 * q * sigma(yy) ** 2),
        residuals=residuals,
    )


def heston_transform(spec: AffineHestonSpec) -> ExpUtilityTransform:
    """The linearising transform specialised to the affine futures model."""
    k, yb, b, mu = spec.kappa, spec.y_bar, spec.beta_vol, spec.mu
    return exp_utility_sv_transform(
        alpha=lambda y: k * (yb - y),
        beta=lambda y: b * np.sqrt(y),
        sigma=lambda y: np.sqrt(y),
        excess_return=lambda y: mu * y,
        rho=spec.rho,
    )


def affine_heston_riccati(spec: AffineHestonSpec, q: float) -> Riccati:
    return Riccati(P=0.5 * spec.beta_vol**2, Q=-(spec.kappa + spec.rho * spec.mu * spec.beta_vol),
                   R=-spec.mu**2 / (2 * q))


def affine_heston_control(spec: AffineHestonSpec) -> ControlSolution:
    """Exponential utility of futures trading wealth with affine stochastic volatility.

    Value U(x e^{r tau}) psi^q with psi = exp(a(tau) y + b(tau)); a solves a
    Riccati equation in closed form and b = kappa y_bar int a.
    """
    tr = heston_transform(spec)
    q = tr.q
    ric = affine_heston_riccati(spec, q)
    if ric.discriminant < 0 or ric.blowup_time is not None:
        raise RiccatiBlowup("the Riccati coefficient blows up for these parameters")
    T, r, gam, rho, b_vol, mu = spec.horizon, spec.r, spec.gamma, spec.rho, spec.beta_vol, spec.mu
    k, yb = spec.kappa, spec.y_bar

    def a(tau):
        return ric.a(tau)

    def b(tau):
        return k * yb * ric.integral(tau)

    def log_g(t, y):
        tau = T - t
        return q * (float(a(tau)) * y + float(b(tau)))

    def value(t, x, y):
        return -math.exp(-gam * x * math.exp(r * (T - t)) + log_g(t, y)) / gam

    def allocation(t, x, y):
        return math.exp(-r * (T - t)) * (mu + rho * b_vol * q * float(a(T - t))) / gam

    def hamiltonian(t, x, y, pi, c):
        d = _partials(value, t, x, y, need_y=True)
        return (
            d["t"] + r * x * d["x"] + 0.5 * b_vol**2 * y * d["yy"] + k * (yb - y) * d["y"]
            + 0.5 * y * pi**2 * d["xx"] + pi * mu * y * d["x"] + rho * pi * b_vol * y * d["xy"]
        )

    return ControlSolution(
        problem="affine-heston",
        horizon=T,
        allocation=allocation,
        value=value,
        certainty_equivalent=lambda t, x, y: x - math.exp(-r * (T - t)) * log_g(t, y) / gam,
        hamiltonian=hamiltonian,
        coefficients={"a": a, "b": b, "q": q},
    )


def indifference_price(g_plain: float, g_hedged: float, gamma: float, r: float, tau: float) -> float:
    """Cash p making an exponential-utility investor indifferent to a short claim.

    With V^0 = U(x e^{r tau}) g and V^h = U(x e^{r tau}) g^h, the condition
    V^h(x + p) = V^0(x) gives e^{-gamma p e^{r tau}} = g / g^h.
    """
    if not (g_plain > 0 and g_hedged > 0 and gamma > 0):
        raise DomainError("g values and gamma must be positive")
    return math.exp(-r * tau) * math.log(g_hedged / g_plain) / gamma
