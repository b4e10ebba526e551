"""Exception types shared across the package.

Input problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so callers (and the CLI exit codes) can tell them apart.
"""


class KPError(Exception):
    """Base class for all package errors."""


class InputError(KPError, ValueError):
    """Malformed or out-of-domain input."""


class DomainError(InputError):
    """A time point lies outside the kernel domain."""


class UnsupportedDerivativeError(InputError):
    """Derivative order at or above the kernel's SDE order."""


class NumericalError(KPError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class DegenerateWindowError(NumericalError):
    """A KP window system does not have a one-dimensional null space."""


class SingularMatrixError(NumericalError):
    """Exact singularity met while factorizing."""


class DegenerateBlockError(NumericalError):
    """A block of the block-tridiagonal recursion could not be inverted."""


class NonDifferentiableError(NumericalError):
    """KP rows cannot be aligned between perturbed hyperparameters."""


class DegenerateConfigurationError(NumericalError):
    """A scattered multi-dimensional KP system has no one-dimensional null space."""
