"""One-period market with finitely many states.

Assets are a bank account with gross return R = e^{rT} plus M risky assets
whose terminal values are given state by state.  The module replicates claims
by a linear solve, finds equivalent martingale measures and searches for
arbitrage portfolios by linear programming.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import DomainError, NoEmm, SingularMarket, ValidationError

RANK_RTOL = 1e-10
POSITIVITY_FLOOR = 1e-12


@dataclass(frozen=True)
class DiscreteMarket:
    """``terminal_payoff_matrix[i, j]`` is the value of asset j in state i."""

    bank_gross_return: float
    terminal_payoff_matrix: np.ndarray
    initial_prices: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        payoffs = np.atleast_2d(np.asarray(self.terminal_payoff_matrix, dtype=float))
        prices = np.atleast_1d(np.asarray(self.initial_prices, dtype=float))
        probs = np.atleast_1d(np.asarray(self.probabilities, dtype=float))
        if payoffs.size == 0 and prices.size == 0:
            payoffs = np.zeros((probs.size, 0))
        object.__setattr__(self, "terminal_payoff_matrix", payoffs)
        object.__setattr__(self, "initial_prices", prices)
        object.__setattr__(self, "probabilities", probs)
        if not self.bank_gross_return > 0:
            raise DomainError("bank gross return must be positive")
        n, m = payoffs.shape
        if n < 1:
            raise ValidationError("market needs at least one state")
        if prices.shape != (m,):
            raise ValidationError(f"expected {m} initial prices, got {prices.size}")
        if probs.shape != (n,):
            raise ValidationError(f"expected {n} probabilities, got {probs.size}")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be positive and sum to 1")
        if not (np.all(np.isfinite(payoffs)) and np.all(np.isfinite(prices))):
            raise ValidationError("payoffs and prices must be finite")

    @property
    def n_states(self) -> int:
        return self.terminal_payoff_matrix.shape[0]

    @property
    def n_assets(self) -> int:
        return self.terminal_payoff_matrix.shape[1]

    def augmented_payoffs(self) -> np.ndarray:
        """Terminal values with the bank account as column 0."""
        bank = np.full((self.n_states, 1), self.bank_gross_return)
        return np.hstack([bank, self.terminal_payoff_matrix])

    def augmented_prices(self) -> np.ndarray:
        return np.concatenate([[1.0], self.initial_prices])

    def with_asset(self, payoffs, price) -> "DiscreteMarket":
        """Copy of the market with one more traded asset."""
        col = np.asarray(payoffs, dtype=float).reshape(-1, 1)
        return DiscreteMarket(
            self.bank_gross_return,
            np.hstack([self.terminal_payoff_matrix, col]),
            np.append(self.initial_prices, price),
            self.probabilities,
        )


@dataclass(frozen=True)
class ReplicationResult:
    bank_units: float
    asset_units: np.ndarray
    initial_cost: float


@dataclass(frozen=True)
class EmmResult:
    q: np.ndarray
    unique: bool = True


@dataclass(frozen=True)
class ArbitrageReport:
    exists: bool
    bank_units: float = 0.0
    asset_units: np.ndarray = field(default_factory=lambda: np.zeros(0))
    terminal_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __bool__(self) -> bool:
        return self.exists


def replicate_claim(market: DiscreteMarket, claim_payoffs) -> ReplicationResult:
    """Solve for (beta, alpha) with beta R + S_T alpha = claim in every state."""
    claim = np.asarray(claim_payoffs, dtype=float).reshape(-1)
    if claim.size != market.n_states:
        raise ValidationError(f"claim needs {market.n_states} state payoffs, got {claim.size}")
    A = market.augmented_payoffs()
    theta, *_ = np.linalg.lstsq(A, claim, rcond=RANK_RTOL)
    residual = np.linalg.norm(A @ theta - claim)
    scale = max(np.linalg.norm(claim), np.linalg.norm(A) * np.linalg.norm(theta), 1.0)
    if residual > RANK_RTOL * scale:
        raise SingularMarket(
            f"claim is not spanned by the traded assets (residual {residual:.3g}); "
            "the market is incomplete or has redundant assets"
        )
    cost = float(market.augmented_prices() @ theta)
    return ReplicationResult(bank_units=float(theta[0]), asset_units=theta[1:], initial_cost=cost)


def _martingale_system(market: DiscreteMarket):
    """Rows: one martingale condition per risky asset, then sum(q) = 1."""
    R = market.bank_gross_return
    A = np.vstack([market.terminal_payoff_matrix.T / R, np.ones((1, market.n_states))])
    b = np.append(market.initial_prices, 1.0)
    return A, b


def find_emm(market: DiscreteMarket) -> EmmResult:
    """Risk-neutral probabilities, strictly positive in every state.

    When several measures exist the minimum-norm one is returned if it is
    strictly positive; otherwise the most interior solution found by linear
    programming.  ``unique`` is False in both of those cases.
    """
    A, b = _martingale_system(market)
    n = market.n_states
    q, _, rank, _ = np.linalg.lstsq(A, b, rcond=RANK_RTOL)
    unique = rank == n
    consistent = np.linalg.norm(A @ q - b) <= 1e-12 * max(1.0, np.linalg.norm(b))
    if consistent and np.all(q > POSITIVITY_FLOOR):
        return EmmResult(q=q, unique=unique)
    if unique and consistent:
        raise NoEmm(f"the unique martingale measure has non-positive weights {q}; arbitrage exists")

    # maximise eps subject to A q = b, q >= eps; variables (q, eps)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(n),
        A_eq=A_eq,
        b_eq=b,
        bounds=[(0, None)] * n + [(None, 1.0)],
        method="highs",
    )
    if res.status != 0 or -res.fun <= POSITIVITY_FLOOR:
        raise NoEmm("no strictly positive martingale measure exists; arbitrage exists")
    q = res.x[:n]
    if np.linalg.norm(A @ q - b) > 1e-10:
        raise NoEmm("linear program returned an inconsistent measure")
    return EmmResult(q=q, unique=unique)


def detect_arbitrage(market: DiscreteMarket, tol: float = 1e-9) -> ArbitrageReport:
    """Search for a zero-cost portfolio with non-negative, not identically zero payoff.

    The linear program maximises the total terminal value of a zero-cost
    portfolio whose state payoffs are non-negative, normalised so the total is
    at most 1.  A positive optimum is an arbitrage and its portfolio is the
    certificate.
    """
    A = market.augmented_payoffs()
    prices = market.augmented_prices()
    k = A.shape[1]
    res = linprog(
        -A.sum(axis=0),
        A_ub=np.vstack([-A, A.sum(axis=0, keepdims=True)]),
        b_ub=np.append(np.zeros(market.n_states), 1.0),
        A_eq=prices.reshape(1, -1),
        b_eq=[0.0],
        bounds=[(None, None)] * k,
        method="highs",
    )
    if res.status != 0 or -res.fun <= tol:
        return ArbitrageReport(exists=False)
    theta = res.x
    return ArbitrageReport(
        exists=True,
        bank_units=float(theta[0]),
        asset_units=theta[1:],
        terminal_values=A @ theta,
    )


def risk_neutral_value(market: DiscreteMarket, claim_payoffs) -> float:
    """Discounted expectation of a claim under the market's EMM."""
    q = find_emm(market).q
    return float(q @ np.asarray(claim_payoffs, dtype=float) / market.bank_gross_return)


def load_market_csv(path, bank_gross_return: float) -> DiscreteMarket:
    """Read a market file.

    The first row is ``initial,<S0 of each asset>``; each further row is
    ``<probability>,<terminal value of each asset>``.
    """
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise ValidationError("market CSV needs a header row and at least one state row")
    header, body = rows[0], rows[1:]
    try:
        initial = [float(x) for x in header[1:]]
        probs = [float(r[0]) for r in body]
        payoffs = [[float(x) for x in r[1:]] for r in body]
    except ValueError as exc:
        raise ValidationError(f"non-numeric entry in market CSV: {exc}") from None
    if any(len(r) != len(initial) for r in payoffs):
        raise ValidationError("each state row needs one terminal value per asset")
    matrix = np.array(payoffs, dtype=float).reshape(len(body), len(initial))
    return DiscreteMarket(bank_gross_return, matrix, np.array(initial), np.array(probs))
