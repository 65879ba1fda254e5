"""Exception types shared across the package."""


class AuxiLearnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AuxiLearnError):
    """Bad configuration: unbound parameters, unknown config keys, infeasible splits."""


class ContractError(AuxiLearnError, ValueError):
    """A caller violated an operation's precondition (shape, dimension, simplex...)."""


class NumericError(AuxiLearnError, ArithmeticError):
    """Non-finite values, singular systems, or curvature unusable for the requested solve."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id
