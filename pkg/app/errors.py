class FuzzyBoltzmannError(Exception):
    """Base class for every error raised by the toolkit"""


class ConfigError(FuzzyBoltzmannError):
    pass


class KernelError(FuzzyBoltzmannError, ValueError):
    pass


class GeometryError(FuzzyBoltzmannError, ValueError):
    pass


class StateError(FuzzyBoltzmannError, ValueError):
    pass


class CollisionError(FuzzyBoltzmannError, ValueError):
    pass


class DissipationError(FuzzyBoltzmannError, ValueError):
    pass


class SolverError(FuzzyBoltzmannError):
    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class AuditError(FuzzyBoltzmannError):
    pass


class DiagnosticsError(FuzzyBoltzmannError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line
