"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit status (see :mod:`dnform.cli`).
"""


class DnformError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(DnformError, ValueError):
    """Invalid user input: malformed files, bad parameters, size mismatch."""

    exit_code = 2


class NumericalError(DnformError, ArithmeticError):
    """A numerical procedure failed (singular solve, divergent corrector)."""

    exit_code = 3


class SmallDenominatorError(NumericalError):
    """A shifted solve hit an undeclared (near) internal resonance."""


class ResonancePolicyError(DnformError):
    """Requested build is not allowed given the flagged internal resonances."""

    exit_code = 4
