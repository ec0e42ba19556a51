"""Seeded Monte Carlo path simulation and estimators.

Paths are generated in fixed-size blocks.  Block ``j`` draws from its own
generator seeded by ``SeedSequence(seed, spawn_key=(j,))``, so results depend
only on (config, n_paths, seed) and blocks could be generated in any order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analytic import OptionKind, OptionSpec
from .errors import DomainError, FellerViolation, NonPositiveState, ValidationError

BLOCK_SIZE = 1 << 16
PATH_DUMP_CAP = 1000


class Scheme(str, enum.Enum):
    GBM_EXACT = "gbm-exact"
    EULER_LOG = "euler-log"
    EULER_PRICE = "euler-price"
    LOCAL_VOL_EULER = "local-vol-euler"
    EXP_OU = "exp-ou"
    HESTON_IMPLICIT = "heston-implicit"
    RANDOM_WALK = "random-walk"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("_", "-"))
        except ValueError:
            raise ValidationError(f"unknown scheme {value!r}; choose from {[s.value for s in cls]}") from None


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme plus the parameters it needs.

    GBM-type schemes use ``sigma``; the local-vol scheme uses ``local_vol(t, S)``;
    exp-OU uses kappa, x_bar, gamma, rho, x0 for the log-volatility X
    (instantaneous volatility e^X); Heston uses the same names for the variance
    process.  The random walk ignores spot and rate and starts at 0.
    """

    scheme: Scheme
    horizon: float
    step_count: int
    spot: float = 1.0
    rate: float = 0.0
    dividend_yield: float = 0.0
    sigma: float | None = None
    local_vol: Callable | None = None
    kappa: float | None = None
    x_bar: float | None = None
    gamma: float | None = None
    rho: float = 0.0
    x0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if int(self.step_count) != self.step_count or self.step_count < 1:
            raise ValidationError("step_count must be a positive integer")
        object.__setattr__(self, "step_count", int(self.step_count))
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        s = self.scheme
        if s is not Scheme.RANDOM_WALK and not self.spot > 0:
            raise DomainError("spot must be positive")
        if s in (Scheme.GBM_EXACT, Scheme.EULER_LOG, Scheme.EULER_PRICE):
            if self.sigma is None or not self.sigma > 0:
                raise DomainError(f"{s.value} needs sigma > 0")
        if s is Scheme.LOCAL_VOL_EULER and not callable(self.local_vol):
            raise ValidationError("local-vol-euler needs a callable local_vol(t, S)")
        if s in (Scheme.EXP_OU, Scheme.HESTON_IMPLICIT):
            missing = [n for n in ("kappa", "x_bar", "gamma", "x0") if getattr(self, n) is None]
            if missing:
                raise ValidationError(f"{s.value} needs {missing}")
            if not -1.0 < self.rho < 1.0:
                raise DomainError("correlation must lie in (-1, 1)")
            if self.kappa < 0 or self.gamma < 0:
                raise DomainError("kappa and gamma must be non-negative")
        if s is Scheme.HESTON_IMPLICIT:
            if self.x0 < 0 or self.x_bar < 0:
                raise DomainError("Heston variance parameters must be non-negative")
            if self.gamma**2 > 2 * self.kappa * self.x_bar * (1 + 1e-12):
                raise FellerViolation(
                    f"gamma^2 = {self.gamma**2:.6g} exceeds 2 kappa x_bar = {2 * self.kappa * self.x_bar:.6g}"
                )

    @property
    def dt(self) -> float:
        return self.horizon / self.step_count

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.step_count + 1)


@dataclass
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    def z_score(self, reference: float) -> float:
        return (self.mean - reference) / self.std_error if self.std_error > 0 else math.inf * (self.mean != reference)


@dataclass
class PathBatch:
    times: np.ndarray
    values: np.ndarray  # (n_paths, step_count + 1)
    aux: dict = field(default_factory=dict)

    def rows(self, limit: int = PATH_DUMP_CAP):
        """``path_id,t,value`` rows for at most ``limit`` paths."""
        for p in range(min(limit, self.values.shape[0])):
            for t, v in zip(self.times, self.values[p]):
                yield p, float(t), float(v)


def _estimate(samples: np.ndarray, seed: int, **diagnostics) -> McEstimate:
    n = samples.size
    if n < 2:
        raise ValidationError("at least two paths are required")
    return McEstimate(
        mean=float(np.mean(samples)),
        std_error=float(np.std(samples, ddof=1) / math.sqrt(n)),
        n_paths=n,
        seed=seed,
        diagnostics=diagnostics,
    )


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _blocks(n_paths: int):
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    for j, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        yield j, min(BLOCK_SIZE, n_paths - start)


def heston_implicit_step(x, dB, dt, kappa, x_bar, gamma):
    """One implicit step of the square-root variance process.

    Solves (1 + kappa dt) y^2 - gamma dB y - (x + kappa x_bar dt - gamma^2 dt / 2) = 0
    for y = sqrt(X_next) and returns (X_next, floored) where ``floored`` marks
    paths whose root was negative or complex and was set to zero.
    """
    a = 1.0 + kappa * dt
    c = x + kappa * x_bar * dt - 0.5 * gamma * gamma * dt
    disc = gamma * gamma * dB * dB + 4.0 * a * c
    y = (gamma * dB + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
    floored = (disc < 0) | (y < 0)
    y = np.where(floored, 0.0, y)
    return y * y, floored


class _Kernel:
    """Advances one block of paths and keeps what the caller asked for."""

    def __init__(self, config: SchemeConfig, n: int, rng: np.random.Generator, record: bool):
        self.c = config
        self.n = n
        self.rng = rng
        self.record = record
        self.floored = 0

    def run(self):
        c = self.c
        dt, N = c.dt, c.step_count
        sqdt = math.sqrt(dt)
        n = self.n
        scheme = c.scheme
        start = 0.0 if scheme is Scheme.RANDOM_WALK else float(c.spot)
        s = np.full(n, start)
        path = np.empty((n, N + 1)) if self.record else None
        var_path = None
        if path is not None:
            path[:, 0] = s
        trap = 0.5 * s.copy()
        if scheme is Scheme.HESTON_IMPLICIT:
            x = np.full(n, float(c.x0))
        elif scheme is Scheme.EXP_OU:
            x = np.full(n, float(c.x0))
        else:
            x = None
        if x is not None and self.record:
            var_path = np.empty((n, N + 1))
            var_path[:, 0] = x
        log_s = np.log(s) if scheme is not Scheme.RANDOM_WALK else None
        mu = c.rate - c.dividend_yield
        rho_bar = math.sqrt(1.0 - c.rho**2)

        if scheme is Scheme.GBM_EXACT:
            drift = (mu - 0.5 * c.sigma**2) * dt
            vol = c.sigma * sqdt
        for i in range(N):
            t = i * dt
            if scheme is Scheme.GBM_EXACT:
                log_s = log_s + drift + vol * self.rng.standard_normal(n)
                s = np.exp(log_s)
            elif scheme is Scheme.EULER_LOG:
                log_s = log_s + (mu - 0.5 * c.sigma**2) * dt + c.sigma * sqdt * self.rng.standard_normal(n)
                s = np.exp(log_s)
            elif scheme is Scheme.EULER_PRICE:
                s = s * (1.0 + mu * dt + c.sigma * sqdt * self.rng.standard_normal(n))
            elif scheme is Scheme.LOCAL_VOL_EULER:
                sig = np.asarray(c.local_vol(t, s), dtype=float)
                if np.any(~(sig >= 0)):
                    raise NonPositiveState(f"local volatility is negative or NaN at t = {t:.6g}")
                log_s = log_s + (mu - 0.5 * sig * sig) * dt + sig * sqdt * self.rng.standard_normal(n)
                s = np.exp(log_s)
            elif scheme is Scheme.EXP_OU:
                z = self.rng.standard_normal((2, n))
                dB, dW = sqdt * z[0], sqdt * z[1]
                vol = np.exp(x)
                log_s = log_s + (mu - 0.5 * vol * vol) * dt + vol * (c.rho * dB + rho_bar * dW)
                x = x + c.kappa * (c.x_bar - x) * dt + c.gamma * dB
                s = np.exp(log_s)
            elif scheme is Scheme.HESTON_IMPLICIT:
                z = self.rng.standard_normal((2, n))
                dB, dW = sqdt * z[0], sqdt * z[1]
                vol = np.sqrt(x)
                log_s = log_s + (mu - 0.5 * x) * dt + vol * (c.rho * dB + rho_bar * dW)
                x, floored = heston_implicit_step(x, dB, dt, c.kappa, c.x_bar, c.gamma)
                self.floored += int(np.count_nonzero(floored))
                s = np.exp(log_s)
            else:  # random walk
                steps = np.where(self.rng.random(n) < 0.5, sqdt, -sqdt)
                s = s + steps
            trap += s if i < N - 1 else 0.5 * s
            if path is not None:
                path[:, i + 1] = s
                if var_path is not None:
                    var_path[:, i + 1] = x
        average = trap / N
        return s, average, path, var_path


def simulate(config: SchemeConfig, n_paths: int, seed: int) -> PathBatch:
    """Full paths on the uniform time grid, plus the auxiliary state where the scheme has one."""
    values, variances, averages, floored = [], [], [], 0
    for j, n in _blocks(n_paths):
        k = _Kernel(config, n, block_rng(seed, j), record=True)
        _, avg, path, var_path = k.run()
        values.append(path)
        averages.append(avg)
        floored += k.floored
        if var_path is not None:
            variances.append(var_path)
    aux = {"average": np.concatenate(averages), "floored_steps": floored}
    if variances:
        key = "variance" if config.scheme is Scheme.HESTON_IMPLICIT else "log_vol"
        aux[key] = np.vstack(variances)
    return PathBatch(config.times(), np.vstack(values), aux)


def _terminal(config: SchemeConfig, n_paths: int, seed: int):
    terminals, averages, floored = [], [], 0
    for j, n in _blocks(n_paths):
        k = _Kernel(config, n, block_rng(seed, j), record=False)
        s, avg, _, _ = k.run()
        terminals.append(s)
        averages.append(avg)
        floored += k.floored
    return np.concatenate(terminals), np.concatenate(averages), floored


def _payoff(spec: OptionSpec, x):
    if spec.kind is OptionKind.CALL:
        return np.maximum(x - spec.strike, 0.0)
    return np.maximum(spec.strike - x, 0.0)


def price_european(config: SchemeConfig, option: OptionSpec, n_paths: int, seed: int) -> McEstimate:
    """Discounted mean payoff at the horizon with its standard error."""
    terminal, _, floored = _terminal(config, n_paths, seed)
    payoff = math.exp(-config.rate * config.horizon) * _payoff(option, terminal)
    return _estimate(payoff, seed, floored_steps=floored)


def price_zero_strike_call(config: SchemeConfig, n_paths: int, seed: int) -> McEstimate:
    """Discounted E S_T; equals spot when the drift is risk neutral."""
    terminal, _, floored = _terminal(config, n_paths, seed)
    return _estimate(math.exp(-config.rate * config.horizon) * terminal, seed, floored_steps=floored)


def price_asian(config: SchemeConfig, strike: float, n_paths: int, seed: int, kind="call") -> McEstimate:
    """Arithmetic-average option on (1/T) int_0^T S_t dt, trapezoid rule including S_0."""
    if config.step_count < 64:
        raise ValidationError("Asian pricing needs at least 64 time steps")
    if strike < 0:
        raise DomainError("strike must be non-negative")
    _, average, floored = _terminal(config, n_paths, seed)
    is_call = OptionKind.parse(kind) is OptionKind.CALL
    payoff = np.maximum(average - strike, 0.0) if is_call else np.maximum(strike - average, 0.0)
    return _estimate(math.exp(-config.rate * config.horizon) * payoff, seed, floored_steps=floored)


def euler_price_ladder(spot, rate, sigma, horizon, option: OptionSpec, step_counts, n_paths: int, seed: int):
    """Price-space Euler estimates on nested grids driven by the same Brownian paths.

    The finest grid draws the increments; coarser grids sum them, so the
    differences between successive grids isolate discretisation error.
    Returns one McEstimate per entry of ``step_counts``.
    """
    step_counts = sorted(int(n) for n in step_counts)
    finest = step_counts[-1]
    if any(finest % n for n in step_counts):
        raise ValidationError("step counts must divide the finest one")
    disc = math.exp(-rate * horizon)
    sums = {n: [] for n in step_counts}
    for j, m in _blocks(n_paths):
        rng = block_rng(seed, j)
        dW = rng.standard_normal((finest, m)) * math.sqrt(horizon / finest)
        for n in step_counts:
            incr = dW.reshape(n, finest // n, m).sum(axis=1)
            s = np.full(m, float(spot))
            dt = horizon / n
            for i in range(n):
                s = s * (1.0 + rate * dt + sigma * incr[i])
            sums[n].append(disc * _payoff(option, s))
    return [_estimate(np.concatenate(sums[n]), seed) for n in step_counts]


@dataclass
class RuinEstimate:
    probability: float
    std_error: float
    exact: float
    n_paths: int
    mean_exit_time: float


BG_SHIFT = 0.5826  # -zeta(1/2)/sqrt(2 pi): overshoot of a discretely monitored Brownian motion


def gamblers_ruin(a: float, b: float, n_paths: int, dt: float, seed: int, continuity_correction: bool = True) -> RuinEstimate:
    """Probability that Brownian motion from 0 exits (a, b) at a.

    Paths are monitored on a grid of width dt.  With the continuity
    correction the barriers are moved inward by 0.5826 sqrt(dt), which cancels
    the first-order bias of discrete monitoring.
    """
    if not a < 0 < b:
        raise DomainError("need a < 0 < b")
    if dt > 1e-3 * min(-a, b) ** 2:
        raise DomainError("dt must be at most 1e-3 min(|a|, b)^2")
    shift = BG_SHIFT * math.sqrt(dt) if continuity_correction else 0.0
    lo, hi = a + shift, b - shift
    sqdt = math.sqrt(dt)
    hits, times = [], []
    chunk = 256
    for j, n in _blocks(n_paths):
        rng = block_rng(seed, j)
        w = np.zeros(n)
        t = np.zeros(n)
        hit_a = np.zeros(n, dtype=bool)
        active = np.arange(n)
        while active.size:
            steps = rng.standard_normal((active.size, chunk)) * sqdt
            paths = w[active, None] + np.cumsum(steps, axis=1)
            out = (paths <= lo) | (paths >= hi)
            done = out.any(axis=1)
            first = np.argmax(out, axis=1)
            idx = active[done]
            hit_a[idx] = paths[done, first[done]] <= lo
            t[idx] += (first[done] + 1) * dt
            keep = active[~done]
            w[keep] = paths[~done, -1]
            t[keep] += chunk * dt
            active = keep
        hits.append(hit_a.astype(float))
        times.append(t)
    hits = np.concatenate(hits)
    p = float(hits.mean())
    return RuinEstimate(
        probability=p,
        std_error=float(hits.std(ddof=1) / math.sqrt(hits.size)),
        exact=b / (b - a),
        n_paths=hits.size,
        mean_exit_time=float(np.concatenate(times).mean()),
    )


@dataclass
class IsometryResult:
    variance: float
    variance_se: float
    mean: float
    mean_se: float
    integral: float


def ito_isometry_check(f, horizon: float, step_count: int, n_paths: int, seed: int) -> IsometryResult:
    """Sample moments of sum f(t_n) dW_n against int_0^T f^2 dt.

    ``f`` is a callable evaluated at the left grid points or an array of
    step values; either way it is treated as a step function on the grid.
    """
    dt = horizon / step_count
    t = np.arange(step_count) * dt
    values = np.asarray(f(t) if callable(f) else f, dtype=float)
    if values.shape != (step_count,):
        raise ValidationError("f must give one value per time step")
    integral = float(np.sum(values**2) * dt)
    results = []
    for j, n in _blocks(n_paths):
        rng = block_rng(seed, j)
        acc = np.zeros(n)
        for i in range(step_count):
            if values[i] != 0.0:
                acc += values[i] * math.sqrt(dt) * rng.standard_normal(n)
            else:
                rng.standard_normal(n)
        results.append(acc)
    x = np.concatenate(results)
    n = x.size
    mean = float(x.mean())
    centred = x - mean
    var = float(np.sum(centred**2) / (n - 1))
    m4 = float(np.mean(centred**4))
    var_se = math.sqrt(max(m4 - var * var, 0.0) / n)
    return IsometryResult(var, var_se, mean, math.sqrt(var / n), integral)
