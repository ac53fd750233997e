"""Exception types raised across the package."""


class ConjDPError(Exception):
    """Base class for all package errors."""


class TooFewPoints(ConjDPError, ValueError):
    pass


class NotConvex(ConjDPError, ValueError):
    pass


class Unbounded(ConjDPError, ValueError):
    pass


class NoActions(ConjDPError, ValueError):
    pass


class NoConjugate(ConjDPError, TypeError):
    pass


class BadModulus(ConjDPError, ValueError):
    pass


class BudgetExceeded(ConjDPError, ValueError):
    pass


class BadParams(ConjDPError, ValueError):
    pass


class PhiDisagreement(ConjDPError, ArithmeticError):
    """Closed-form and recursive condition-number bounds disagree."""
