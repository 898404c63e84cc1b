"""Exception types shared across the package."""


class LipobsError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(LipobsError):
    """Malformed expression text; carries the character position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownVariableError(LipobsError):
    """Identifier not in the declared variable set."""


class DomainError(LipobsError):
    """Expression evaluated outside its real domain (sqrt of a negative,
    division by zero, overflow)."""

    def __init__(self, message, component=None):
        if component is not None:
            message = f"component {component}: {message}"
        super().__init__(message)
        self.component = component


class DimensionError(LipobsError):
    """Inconsistent matrix/vector dimensions in a problem or plant."""


class InfeasibleError(LipobsError):
    """The constraint set has no strictly feasible point."""


class NumericalFailureError(LipobsError):
    """The solver could not make progress (stalled Newton steps, singular
    systems after regularization, or an apparently unbounded objective)."""


class SimulationBlowup(LipobsError):
    """Integration produced a non-finite state."""

    def __init__(self, time):
        super().__init__(f"state became non-finite at t={time:.6g}")
        self.time = time


class PlantFileError(LipobsError):
    """Malformed plant or design file; carries the line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelingError(LipobsError):
    """A precondition of the synthesis theorems is violated by the plant
    data (e.g. performance map with maximum singular value >= 1)."""
