"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when an operation receives structurally invalid input."""


class CapacityError(InputError):
    """Raised when a list is too long for exhaustive permutation enumeration."""


class NumericalError(ArithmeticError):
    """Raised when a computation hits a non-finite value or a zero denominator."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


class DataFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class TrainingDivergedError(RuntimeError):
    """Raised when a loss component becomes non-finite during training."""
