"""Exception hierarchy shared by every module."""


class RopawsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RopawsError, ValueError):
    """Input data violates a documented invariant (shape, norm, simplex...)."""


class ParameterError(ValidationError):
    """A hyperparameter is outside its admissible range."""


class NumericalFailure(RopawsError, ArithmeticError):
    """A numerical routine did not reach its accuracy target."""
