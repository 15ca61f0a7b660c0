class DqicError(Exception):
    """Base class for package errors."""


class ConfigError(DqicError, ValueError):
    pass


class DomainError(DqicError, ValueError):
    pass


class ConvergenceError(DqicError, RuntimeError):
    def __init__(self, msg, distance=None, iterations=None):
        super().__init__(msg)
        self.distance = distance
        self.iterations = iterations


class NumericalError(DqicError, FloatingPointError):
    pass
