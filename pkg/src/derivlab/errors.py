"""Exception and warning types shared across the package."""


class DerivlabError(Exception):
    """Base class for all package errors."""


class ValidationError(DerivlabError, ValueError):
    """An input violates a documented precondition."""


class DomainError(ValidationError):
    """A parameter lies outside the domain of a formula."""


class NumericalError(DerivlabError, ArithmeticError):
    """A numerical procedure failed to produce a trustworthy result."""


# market_core
class SingularMarket(NumericalError):
    pass


class NoEmm(NumericalError):
    pass


# analytic_pricing
class DegenerateVariance(DomainError):
    pass


# vol_surface
class PriceOutOfBounds(ValidationError):
    pass


class NoConvergence(NumericalError):
    pass


class InsufficientData(ValidationError):
    pass


class ArbitrageViolation(ValidationError):
    pass


# fourier_engine
class NumericOverflow(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class StripViolation(ValidationError):
    pass


class BranchCutWarning(RuntimeWarning):
    pass


# monte_carlo
class FellerViolation(ValidationError):
    pass


class NonPositiveState(NumericalError):
    pass


# pde_lattice
class UnstableTree(ValidationError):
    pass


class StabilityViolation(ValidationError):
    pass


# optimal_control
class HorizonBeyondBlowup(DomainError):
    pass


class NoLinearizingExponent(NumericalError):
    pass


class RiccatiBlowup(NumericalError):
    pass
