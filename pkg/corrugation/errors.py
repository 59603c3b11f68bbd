# errors.py - exception hierarchy shared by every pipeline step

from typing import Any, Dict, Optional, Tuple


class EngineError(Exception):
    """Base class. `exit_code` is what the CLI returns when this escapes a run."""

    exit_code = 4

    def __init__(self, message: str, node: Optional[Tuple[int, ...]] = None, **details: Any):
        super().__init__(message)
        self.message = message
        self.node = tuple(int(i) for i in node) if node is not None else None
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "node": list(self.node) if self.node is not None else None,
            "details": {k: _plain(v) for k, v in sorted(self.details.items())},
            "exit_code": self.exit_code,
        }

    def __str__(self) -> str:
        if self.node is None:
            return self.message
        return f"{self.message} (node {self.node})"


def _plain(value: Any) -> Any:
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# -------------------------
# Families
# -------------------------
class ConfigError(EngineError):
    exit_code = 2


class PreconditionError(EngineError):
    exit_code = 3


class NumericalError(EngineError):
    exit_code = 4


# -------------------------
# Preconditions
# -------------------------
class ResolutionError(PreconditionError):
    """A length scale or node count is below what the grid can represent."""


class NyquistViolation(ResolutionError):
    pass


class LayerUnresolved(ResolutionError):
    pass


class UnsupportedDimension(PreconditionError):
    pass


class FailsMetricBounds(PreconditionError):
    pass


class OrderingViolated(PreconditionError):
    pass


class NotAdmissible(PreconditionError):
    pass


class ShortnessLost(PreconditionError):
    pass


class NegativeTrace(PreconditionError):
    pass


# -------------------------
# Numerical failures
# -------------------------
class NotDecomposable(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class JacobianSingular(NumericalError):
    pass


class DegenerateSeed(NumericalError):
    pass


class DefectBlowup(NumericalError):
    pass


class ProximityLost(NumericalError):
    """The accumulated C^0 displacement left the requested neighbourhood."""


class FitDegenerate(NumericalError):
    pass


class DivisionGuard(NumericalError):
    pass
