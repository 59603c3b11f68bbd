"""Convex-integration corrugation engine on discrete 2-D charts."""

from corrugation.errors import ConfigError, EngineError, NumericalError, PreconditionError

__version__ = "0.1.0"

__all__ = ["ConfigError", "EngineError", "NumericalError", "PreconditionError", "__version__"]
