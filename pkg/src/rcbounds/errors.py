"""Exception hierarchy shared by all modules."""


class RcBoundsError(Exception):
    """Base class for every error raised by this package."""


class UsageError(RcBoundsError, ValueError):
    """Caller violated a precondition (bad shape, bad index, bad config)."""


class ConfigError(UsageError):
    pass


class NumericalError(RcBoundsError, ArithmeticError):
    """A numerical procedure failed (singular solve, blow-up, collapse)."""


class IntegrationError(NumericalError):
    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class GenerationError(NumericalError):
    pass


class SaturationError(NumericalError):
    def __init__(self, message, last_mean):
        super().__init__(f"{message}; last windowed mean {last_mean:.6g}")
        self.last_mean = last_mean


class ParseError(UsageError):
    def __init__(self, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
