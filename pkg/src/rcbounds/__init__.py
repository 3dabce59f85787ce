"""Error bounds for iterated reservoir-computing forecasts of chaotic systems."""
from importlib.metadata import PackageNotFoundError, version

from .errors import (ConfigError, GenerationError, IntegrationError, NumericalError, ParseError,
                     RcBoundsError, SaturationError, UsageError)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = ["ConfigError", "GenerationError", "IntegrationError", "NumericalError", "ParseError",
           "RcBoundsError", "SaturationError", "UsageError", "__version__"]
