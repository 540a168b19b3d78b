"""Exception hierarchy used across the package."""


class TF2DError(Exception):
    """Base class for all package errors."""


class ParameterError(TF2DError, ValueError):
    """Invalid argument value or inconsistent argument combination."""


class PreconditionError(ParameterError):
    """A documented operation precondition does not hold for the input."""


class DomainError(TF2DError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class SingularityError(DomainError):
    """Evaluation requested exactly on a non-integrable singularity."""


class NumericError(TF2DError, ArithmeticError):
    """Non-finite data or loss of numerical validity."""


class ConvergenceError(TF2DError, RuntimeError):
    """An iterative solver did not reach its tolerance."""


class TruncationError(TF2DError, RuntimeError):
    """A truncated sum or domain could not be terminated safely."""


class CertificateError(TF2DError, ValueError):
    """A declared singularity certificate failed its spot check."""
