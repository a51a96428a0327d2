"""Exception types shared across the package."""


class AdvSTError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AdvSTError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class DomainError(ContractViolation, ArithmeticError):
    """A numeric operand lies outside the domain of a primitive (log of 0, x/0)."""


class GraphStateError(AdvSTError, RuntimeError):
    """A differentiation graph was used after it had been consumed."""


class FormatError(AdvSTError, ValueError):
    """A binary file does not match its expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InfiniteCostError(AdvSTError, ValueError):
    """Transport cost between samples with different labels is infinite."""


class GradientCheckError(AdvSTError, ArithmeticError):
    """A finite-difference evaluation produced a non-finite value."""


class ConfigError(AdvSTError, ValueError):
    """A run configuration file is malformed or violates TrainConfig invariants."""


class TrainingDivergence(AdvSTError, RuntimeError):
    """The minimization loss became non-finite."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}
