"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class MfgNetError(Exception):
    """Base class. ``stage`` is filled in by the MFG coupler ("hjb" or "fp")."""

    stage: str | None = None


class GraphError(MfgNetError, ValueError):
    pass


class DimensionMismatch(MfgNetError, ValueError):
    pass


class NonConvergence(MfgNetError):
    """An iterative solver hit its iteration cap.

    Carries the last residual norm and, for the fixed-point loop, the
    iteration history so callers can inspect what happened.
    """

    def __init__(self, message: str, residual: float, history: list | None = None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class SingularJacobian(MfgNetError):
    pass


class NumericallySingular(MfgNetError):
    pass


class NonPositiveDensity(MfgNetError):
    pass


class CrossCheckError(MfgNetError):
    pass


class ConfigError(MfgNetError, ValueError):
    """Raised by the config parser; ``path`` is the offending field path."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
