"""Exception taxonomy shared across the engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Operand dimensions do not chain; message names both shapes."""


class ContractError(EngineError):
    """A documented precondition or postcondition was violated."""


class ParameterError(EngineError):
    """A hyperparameter or call argument is out of its valid range."""


class InputError(EngineError):
    """Input data violates a structural invariant (non-finite, empty, ...)."""


class IngestionError(EngineError):
    """Too many malformed records in a data file."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EvaluationError(EngineError):
    """A user-supplied function produced a non-finite value."""
