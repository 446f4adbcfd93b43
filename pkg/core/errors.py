# =============================================================================
# core/errors.py  —  Exception Hierarchy
# =============================================================================
#
# WHAT THIS FILE DOES:
#   Every failure the engine can report has a named exception here, all
#   rooted at MlmcVbError.  Callers that only care "did the run fail?"
#   catch the base class; callers that can recover (e.g. resampling a bad
#   draw) catch the specific subclass.
#
# WHO CATCHES WHAT:
#   - main.py turns any MlmcVbError into a one-line stderr message + exit 2
#   - tools/mcp_server.py turns it into an {"error": ...} dict
#   - core/engine.py catches EstimatorDomainError when skip_bad_draws is on
# =============================================================================

from __future__ import annotations

from typing import Optional, Sequence


class MlmcVbError(RuntimeError):
    """Base class for every error raised by this package."""


class ConfigurationError(MlmcVbError):
    """Invalid sizes, dimensions, selectors or hyperparameters."""


class DomainError(MlmcVbError):
    """A function was evaluated outside its mathematical domain."""

    def __init__(self, message: str, value: object = None):
        super().__init__(message)
        self.value = value


class DecompositionError(MlmcVbError):
    """A matrix expected to be positive definite was not.

    Attributes:
        pivot: 0-based index of the first non-positive pivot, or None when
            the failure is not attributable to a single pivot.
    """

    def __init__(self, message: str, pivot: Optional[int] = None):
        super().__init__(message)
        self.pivot = pivot


class EstimatorDomainError(MlmcVbError):
    """log f or a ratio denominator was undefined for a drawn sample.

    The context fields are filled in as the error travels up: the MLMC
    layer knows theta and level, the engine adds the iteration.
    """

    def __init__(
        self,
        message: str,
        theta: Optional[Sequence[float]] = None,
        level: Optional[int] = None,
        iteration: Optional[int] = None,
    ):
        super().__init__(message)
        self.theta = None if theta is None else [float(t) for t in theta]
        self.level = level
        self.iteration = iteration

    def with_context(self, **context) -> "EstimatorDomainError":
        """Return a copy with extra (theta / level / iteration) context."""
        base = str(self.args[0]) if self.args else ""
        return EstimatorDomainError(
            base,
            theta=context.get("theta", self.theta),
            level=context.get("level", self.level),
            iteration=context.get("iteration", self.iteration),
        )

    def __str__(self) -> str:
        parts = [str(self.args[0]) if self.args else "estimator domain error"]
        if self.iteration is not None:
            parts.append(f"iteration={self.iteration}")
        if self.level is not None:
            parts.append(f"level={self.level}")
        if self.theta is not None:
            parts.append("theta=[" + ", ".join(f"{t:.6g}" for t in self.theta) + "]")
        return " | ".join(parts)


class CapabilityError(MlmcVbError):
    """The model does not provide what the requested method needs."""


class IngestionError(MlmcVbError):
    """A data file could not be parsed or validated.

    Attributes:
        row: 1-based data row (header excluded) where the problem was found,
            or None for whole-file problems.
    """

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DegenerateSampleError(MlmcVbError):
    """A summary statistic is undefined for the given sample."""


class AbcRejectionError(MlmcVbError):
    """The acceptance rate of ABC rejection sampling collapsed."""

    def __init__(self, message: str, accepted: int = 0, proposed: int = 0):
        super().__init__(message)
        self.accepted = accepted
        self.proposed = proposed


class ReportError(MlmcVbError):
    """Artifacts could not be produced or written."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path
