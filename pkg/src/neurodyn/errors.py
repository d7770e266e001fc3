"""Exception hierarchy shared by all neurodyn modules."""


class NeurodynError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(NeurodynError, ValueError):
    """Operand shapes do not conform."""


class DomainError(NeurodynError, ValueError):
    """A value falls outside the domain of an operation (e.g. log of a negative)."""


class ContractError(NeurodynError, ValueError):
    """A caller violated a documented precondition."""


class ParameterError(NeurodynError, ValueError):
    """An argument or configuration value is invalid."""


class DegenerateError(NeurodynError, ValueError):
    """Input is degenerate (constant signal, identical points, zero power...)."""


class EmptyResultError(NeurodynError):
    """An operation would return nothing (e.g. every channel rejected)."""


class TrainingError(NeurodynError, RuntimeError):
    """Optimization produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DivergenceError(NeurodynError, RuntimeError):
    """An iterated map produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
