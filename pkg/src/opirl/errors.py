"""Shared exception types."""


class DimensionError(ValueError):
    """Array shapes do not line up with what the operation expects."""


class ContractError(RuntimeError):
    """An operation was called in a state its contract forbids."""


class DomainError(ValueError):
    """Input values violate a mathematical precondition (support, range)."""


class ParseError(ValueError):
    """A data file is malformed; message carries the line number."""


class SchemaError(ValueError):
    """A data file parsed but its declared dimensions/ids do not match."""


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; message names the step and loss."""
