"""Exception hierarchy shared across the package."""


class SyfarError(Exception):
    """Base class for all package errors."""


class ShapeError(SyfarError, ValueError):
    pass


class NumericError(SyfarError, ArithmeticError):
    pass


class StateError(SyfarError, RuntimeError):
    """Operation called in the wrong order, e.g. backward before forward."""


class ConfigError(SyfarError, ValueError):
    pass


class DomainError(SyfarError, ValueError):
    pass


class KindError(SyfarError, TypeError):
    """A confusion matrix of the wrong kind was supplied."""


class IngestionError(SyfarError, ValueError):
    """Malformed input file; ``problems`` lists ``(line_number, message)``."""

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            detail = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:20])
            message = f"{message}: {detail}"
        super().__init__(message)


class ConvergenceError(NumericError):
    def __init__(self, message, iterations):
        self.iterations = iterations
        super().__init__(f"{message} (after {iterations} iterations)")
