"""Exception hierarchy shared by all a3n modules.

``ValidationError`` subclasses map to CLI exit code 2, ``DivergenceError``
to exit code 3.
"""


class A3NError(Exception):
    pass


class ValidationError(A3NError, ValueError):
    """Bad input, parameter or configuration."""


class ShapeError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class BehindCameraError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class PairingError(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed binary container or raster."""


class UntrainedWeightsError(ValidationError):
    pass


class DivergenceError(A3NError, ArithmeticError):
    """Loss became non-finite during training."""
