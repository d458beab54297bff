"""Exception types shared across the toolkit."""


class InputDomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ConfigError(ValueError):
    """A run or training configuration is invalid."""


class IngestionError(RuntimeError):
    """A dataset could not be read from disk."""


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite."""


class OutputConflictError(FileExistsError):
    """An output directory already holds results and overwrite was not requested."""
