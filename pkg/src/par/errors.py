"""Exception types shared across the package."""


class ParError(Exception):
    """Base class for all package errors."""


class DimensionError(ParError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(ParError):
    """An operation was called outside its contract (bad arity, bad index)."""


class DataError(ParError):
    """Malformed or out-of-range input data (unknown id, short pool)."""


class ConfigError(ParError):
    """Invalid or inconsistent configuration."""


class NumericError(ParError):
    """Non-finite values where finite ones are required."""
