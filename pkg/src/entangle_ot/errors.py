"""Exception hierarchy shared across the package."""


class EntangleOTError(Exception):
    """Base class for all package errors."""


class InvalidMeasure(EntangleOTError, ValueError):
    pass


class EmptyClass(EntangleOTError, ValueError):
    pass


class DimensionMismatch(EntangleOTError, ValueError):
    pass


class SolverError(EntangleOTError, RuntimeError):
    """The exact solver failed to produce a certified optimum."""


class SandwichViolated(EntangleOTError, AssertionError):
    def __init__(self, message, slack):
        super().__init__(message)
        self.slack = slack


class BoundViolated(EntangleOTError, AssertionError):
    def __init__(self, message, slack):
        super().__init__(message)
        self.slack = slack


class ChainViolation(EntangleOTError, ValueError):
    pass


class NotSPD(EntangleOTError, ValueError):
    pass


class QuadratureNotConverged(EntangleOTError, RuntimeError):
    pass


class ConfigInvalid(EntangleOTError, ValueError):
    pass


class ChainGenerationFailed(EntangleOTError, RuntimeError):
    pass


class MissingClass(EntangleOTError, ValueError):
    pass


class FeatureTermUnavailable(EntangleOTError, ValueError):
    pass


class Diverged(EntangleOTError, RuntimeError):
    """Training produced a non-finite objective.

    ``model`` and ``history`` hold the last finite state.
    """

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history
