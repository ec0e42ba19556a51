"""Binomial trees with early exercise, and finite-difference solvers.

Trees use the Cox-Ross-Rubinstein parameterisation.  By default the last
step is replaced by the closed-form European value (which removes the
odd/even oscillation) and two tree sizes are combined by Richardson
extrapolation.

The Black-Scholes solver works in log-spot with a theta scheme.  The Asian
solver prices an arithmetic-average call through the one-dimensional PDE in
the ratio x = (K - Z_t) / S_t, after a change of variable that removes the
first-order term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .analytic import BsParams, OptionSpec, _price
from .errors import DomainError, StabilityViolation, UnstableTree, ValidationError


class Exercise(str, enum.Enum):
    EUROPEAN = "european"
    AMERICAN = "american"
    BERMUDA = "bermuda"


@dataclass(frozen=True)
class TreeConfig:
    """Tree size, market, contract and exercise style.

    For Bermuda exercise the holder may also exercise once at ``t1`` against
    strike ``k1``; ``spec.strike`` is the strike at maturity.
    """

    step_count: int
    params: BsParams
    spec: OptionSpec
    exercise: Exercise = Exercise.AMERICAN
    t1: float | None = None
    k1: float | None = None
    smoothing: bool = True
    richardson: bool = True

    def __post_init__(self):
        object.__setattr__(self, "exercise", Exercise(self.exercise))
        if int(self.step_count) != self.step_count or self.step_count < 16:
            raise ValidationError("step_count must be an integer of at least 16")
        if self.exercise is Exercise.BERMUDA:
            if self.t1 is None or self.k1 is None:
                raise ValidationError("Bermuda exercise needs t1 and k1")
            if not 0 < self.t1 < self.params.time_to_maturity:
                raise DomainError("t1 must lie strictly inside (0, T)")
            if not self.k1 > 0:
                raise DomainError("k1 must be positive")


@dataclass
class ExerciseBoundary:
    """Critical spot per time step (NaN where no node is exercised).

    ``slope`` is the one-sided difference quotient of the option value across
    the boundary cell, the discrete analogue of the smooth-pasting condition.
    """

    times: np.ndarray
    levels: np.ndarray
    slope: np.ndarray

    def rows(self):
        for t, s in zip(self.times, self.levels):
            yield float(t), (None if math.isnan(s) else float(s))


@dataclass
class TreeResult:
    price: float
    boundary: ExerciseBoundary
    raw_price: float  # the N-step tree before extrapolation


def _intrinsic(is_call: bool, s, k):
    return np.maximum(s - k, 0.0) if is_call else np.maximum(k - s, 0.0)


def _run_tree(config: TreeConfig, n: int, want_boundary: bool):
    p_ = config.params
    T, r, q, sigma = p_.time_to_maturity, p_.rate, p_.dividend_yield, p_.sigma
    dt = T / n
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp((r - q) * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise UnstableTree(f"risk-neutral probability {p:.6g} is outside (0, 1); increase step_count")
    disc = math.exp(-r * dt)
    is_call = config.spec.is_call
    K = config.spec.strike
    american = config.exercise is Exercise.AMERICAN
    bermuda_step = None
    if config.exercise is Exercise.BERMUDA:
        bermuda_step = int(round(config.t1 / dt))
        if not 0 < bermuda_step < n:
            raise UnstableTree("t1 falls outside the interior of the tree; increase step_count")

    def nodes(i):
        return p_.spot * u ** (2.0 * np.arange(i + 1) - i)

    levels = np.full(n, np.nan)
    slopes = np.full(n, np.nan)

    if config.smoothing:
        s = nodes(n - 1)
        v = _price(s, K, r, q, sigma, dt, is_call)
        start = n - 1
    else:
        v = _intrinsic(is_call, nodes(n), K)
        start = n

    for i in range(start, -1, -1):
        if i < start:
            v = disc * (p * v[1:] + (1.0 - p) * v[:-1])
        s = nodes(i)
        if american or i == bermuda_step:
            strike = config.k1 if i == bermuda_step else K
            exercise = _intrinsic(is_call, s, strike)
            hit = (exercise >= v) & (exercise > 0)
            v = np.where(hit, exercise, v)
            if want_boundary and i < n and hit.any() and not hit.all():
                idx = np.flatnonzero(hit)
                if is_call:
                    j = idx[0]
                    if j > 0:
                        levels[i] = 0.5 * (s[j - 1] + s[j])
                        slopes[i] = (v[j] - v[j - 1]) / (s[j] - s[j - 1])
                else:
                    j = idx[-1]
                    if j < i:
                        levels[i] = 0.5 * (s[j] + s[j + 1])
                        slopes[i] = (v[j + 1] - v[j]) / (s[j + 1] - s[j])
    boundary = ExerciseBoundary(np.arange(n) * dt, levels, slopes)
    return float(v[0]), boundary


def tree_price(config: TreeConfig) -> TreeResult:
    """Price and exercise boundary on a recombining binomial tree."""
    n = int(config.step_count)
    price, boundary = _run_tree(config, n, want_boundary=True)
    raw = price
    if config.richardson:
        half, _ = _run_tree(config, n // 2, want_boundary=False)
        price = 2.0 * price - half
    return TreeResult(price, boundary, raw)


def bermuda_price(params: BsParams, spec: OptionSpec, t1: float, k1: float) -> float:
    """Option with one extra exercise date ``t1`` (strike ``k1``) before maturity.

    At ``t1`` the holder receives max(exercise value, European value of the
    remaining option); that payoff is integrated against the lognormal law of
    S_{t1}, splitting the integral at the critical spot.
    """
    T = params.time_to_maturity
    if not 0 < t1 < T:
        raise DomainError("t1 must lie strictly inside (0, T)")
    if not k1 > 0:
        raise DomainError("k1 must be positive")
    r, q, sigma = params.rate, params.dividend_yield, params.sigma
    is_call = spec.is_call
    rest = T - t1

    def payoff(s):
        cont = _price(s, spec.strike, r, q, sigma, rest, is_call)
        return max(float(_intrinsic(is_call, s, k1)), float(cont))

    m = math.log(params.spot) + (r - q - 0.5 * sigma**2) * t1
    sd = sigma * math.sqrt(t1)

    def integrand(z):
        return payoff(math.exp(m + sd * z)) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    points = [(math.log(k1) - m) / sd]
    crit = _critical_spot(is_call, spec.strike, k1, r, q, sigma, rest)
    if crit is not None:
        points.append((math.log(crit) - m) / sd)
    points = sorted(z for z in points if -12 < z < 12)
    edges = [-12.0, *points, 12.0]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
    return math.exp(-r * t1) * total


def _critical_spot(is_call, k2, k1, r, q, sigma, rest):
    """Spot where immediate exercise equals the European continuation, if any."""
    def gap(s):
        return float(_intrinsic(is_call, s, k1)) - float(_price(s, k2, r, q, sigma, rest, is_call))

    grid = np.geomspace(k1 * 1e-3, k1 * 1e3, 400)
    vals = np.array([gap(s) for s in grid])
    sign = np.flatnonzero(np.diff(np.sign(vals)) != 0)
    for j in sign:
        if vals[j] != 0 and vals[j + 1] != 0:
            return brentq(gap, grid[j], grid[j + 1], xtol=1e-14 * k1)
    return None


@dataclass
class FdGrid:
    """Solution of a one-dimensional pricing PDE at the valuation time.

    ``axis`` holds the spatial nodes in the solver's own coordinate, ``spot``
    the corresponding spot levels where that makes sense.
    """

    axis: np.ndarray
    spot: np.ndarray
    values: np.ndarray
    times: np.ndarray
    theta: float
    info: dict = field(default_factory=dict)

    def value_at(self, s: float) -> float:
        x = math.log(s)
        if not self.axis[0] <= x <= self.axis[-1]:
            raise DomainError("spot is outside the grid")
        return float(CubicSpline(self.axis, self.values)(x))


def _theta_step(v, lower, diag, upper, dt, theta, bc_lo, bc_hi):
    """Advance V_tau = L V by one step; L given by its tridiagonal bands on interior nodes."""
    n = v.size
    interior = v[1:-1]
    lv = diag * interior + lower * v[:-2] + upper * v[2:]
    rhs = interior + (1.0 - theta) * dt * lv
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = -theta * dt * upper[:-1]
    ab[1, :] = 1.0 - theta * dt * diag
    ab[2, :-1] = -theta * dt * lower[1:]
    rhs[0] += theta * dt * lower[0] * bc_lo
    rhs[-1] += theta * dt * upper[-1] * bc_hi
    out = np.empty_like(v)
    out[1:-1] = solve_banded((1, 1), ab, rhs)
    out[0], out[-1] = bc_lo, bc_hi
    return out


def fd_solve_bs(
    params: BsParams,
    payoff: OptionSpec | Callable,
    n_space: int = 400,
    n_time: int = 400,
    theta: float = 0.5,
    rannacher_steps: int = 2,
    width: float = 5.0,
) -> FdGrid:
    """Black-Scholes PDE on [S/width, S*width] in log-spot.

    ``payoff`` is an OptionSpec or a vectorised callable psi(s).  Far-field
    values are Dirichlet, e^{-r tau} psi(s e^{(r-q) tau}).  Crank-Nicolson
    (theta = 1/2) starts with ``rannacher_steps`` fully implicit half steps.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValidationError("theta must lie in [0, 1]")
    if n_space < 8 or n_time < 1:
        raise ValidationError("grid too small")
    if isinstance(payoff, OptionSpec):
        spec = payoff
        psi = lambda s: _intrinsic(spec.is_call, s, spec.strike)  # noqa: E731
    else:
        psi = payoff
    S, r, q, sigma, T = params.spot, params.rate, params.dividend_yield, params.sigma, params.time_to_maturity
    x = np.linspace(math.log(S / width), math.log(S * width), n_space + 1)
    dx = x[1] - x[0]
    s = np.exp(x)
    b = r - q - 0.5 * sigma**2
    # diffusion coefficient fitted so that constants and e^x (the far-field
    # asymptotes) are reproduced exactly by the discrete operator
    a = (0.5 * sigma**2 + b * (1.0 - math.sinh(dx) / dx)) * dx**2 / (2.0 * (math.cosh(dx) - 1.0))
    lower = np.full(n_space - 1, a / dx**2 - b / (2 * dx))
    upper = np.full(n_space - 1, a / dx**2 + b / (2 * dx))
    diag = np.full(n_space - 1, -2 * a / dx**2 - r)

    dt = T / n_time
    if theta < 0.5 and dt * (1 - 2 * theta) * (2 * a / dx**2 + r) > 1.0:
        raise StabilityViolation(
            f"time step {dt:.3g} exceeds the stability bound {1 / ((1 - 2 * theta) * (2 * a / dx**2 + r)):.3g}"
        )

    edges = np.array([s[0], s[-1]])

    def boundary(tau):
        lo, hi = math.exp(-r * tau) * np.asarray(psi(edges * math.exp((r - q) * tau)), dtype=float)
        return float(lo), float(hi)

    v = np.asarray(psi(s), dtype=float).copy()
    tau = 0.0
    steps = []
    if theta == 0.5 and rannacher_steps > 0:
        steps += [(dt / 2, 1.0)] * (2 * rannacher_steps)
        steps += [(dt, theta)] * (n_time - rannacher_steps)
    else:
        steps += [(dt, theta)] * n_time
    for h, th in steps:
        tau += h
        lo, hi = boundary(tau)
        v = _theta_step(v, lower, diag, upper, h, th, lo, hi)
    return FdGrid(x, s, v, np.linspace(0.0, T, n_time + 1), theta, {"dx": dx, "dt": dt})


def _phi1(z):
    """expm1(z)/z with the removable singularity filled."""
    return 1.0 + z / 2 + z * z / 6 if abs(z) < 1e-8 else math.expm1(z) / z


def fd_solve_asian_reduced(
    params: BsParams,
    strike: float,
    n_space: int = 800,
    n_time: int = 400,
    running_average: float = 0.0,
    elapsed: float = 0.0,
) -> float:
    """Arithmetic-average Asian call, (1/T int_0^T S dt - K)^+, by a one-dimensional PDE.

    With x = (K - Z_t)/S_t and Z_t = (1/T) int_0^t S du the price is
    S_t phi(t, x), where phi_t - (1/T + r x) phi_x + sigma^2 x^2 / 2 phi_xx = 0
    and phi(T, x) = max(-x, 0).  Writing x = (y + c) e^{r(T-t)} - c with
    c = 1/(rT) turns this into psi_t + sigma^2 (y + g(t))^2 / 2 psi_yy = 0 with
    g(t) = c (1 - e^{-r(T-t)}), which is solved by Crank-Nicolson on a uniform
    y grid that has y = 0 (the payoff kink) as a node.

    ``elapsed`` is the time already run (years) within the averaging window of
    length ``elapsed + params.time_to_maturity``; ``running_average`` is Z_t.
    """
    if strike < 0:
        raise DomainError("strike must be non-negative")
    if params.dividend_yield != 0.0:
        raise DomainError("the reduced Asian PDE is implemented without dividends")
    S, r, sigma = params.spot, params.rate, params.sigma
    tau = params.time_to_maturity
    T = elapsed + tau
    x0 = (strike - running_average) / S

    def g(rem):
        return rem / T * _phi1(-r * rem)

    y0 = x0 * math.exp(-r * tau) - g(tau)
    # far left the option is exercised for sure and -y solves the PDE exactly
    half = max(2.0 * abs(x0), abs(y0) + 1.0, 1.0) + 8.0 * sigma * math.sqrt(tau) * (abs(y0) + g(tau) + 1.0)
    dy = 2.0 * half / n_space
    y = dy * np.arange(-(n_space // 2), n_space // 2 + 1)
    v = np.maximum(-y, 0.0)
    dt = tau / n_time

    def bands(rem):
        a = 0.5 * sigma**2 * (y[1:-1] + g(rem)) ** 2 / dy**2
        return a, -2.0 * a, a

    rem = 0.0
    steps = [(dt / 2, 1.0)] * 4 + [(dt, 0.5)] * (n_time - 2)
    for h, th in steps:
        mid = rem + h / 2
        lower, diag, upper = bands(mid)
        rem += h
        v = _theta_step(v, lower, diag, upper, h, th, -y[0], 0.0)
    if not y[0] < y0 < y[-1]:
        raise DomainError("valuation point falls outside the Asian grid")
    return S * float(np.interp(y0, y, v))
