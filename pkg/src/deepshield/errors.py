"""Exception hierarchy shared across the package.

Each CLI/service failure maps onto one of these; the exit-code and HTTP
translation lives in the service layer, not here.
"""


class DeepshieldError(Exception):
    """Base class for all package-defined failures."""


class ConfigError(DeepshieldError):
    """Invalid configuration value or structure."""


class DimensionError(DeepshieldError):
    """Tensor/operand shapes are incompatible."""


class InputError(DeepshieldError):
    """Caller-supplied data violates a documented precondition."""


class ContractError(DeepshieldError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class LoadError(DeepshieldError):
    """A file could be read but its contents are invalid."""


class ModelMismatchError(DeepshieldError):
    """Checkpoint and run configuration disagree about the model."""


class NumericError(DeepshieldError):
    """Non-finite values appeared where finite math was required."""


class MetricError(DeepshieldError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
