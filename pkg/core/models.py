# =============================================================================
# core/models.py  —  Data Models (the "nouns" of the system)
# =============================================================================
#
# These dataclasses and enums define the *shape* of every piece of
# information that flows through the engine: point streams, MLMC
# corrections, variational parameters, run traces and baseline outputs.
# They carry (almost) no behavior; the operations live in the modules
# named after them (qmc, mlmc, gaussian_family, engine, ...).
#
# ARRAY FIELDS:
#   Numeric payloads are numpy arrays.  Dataclasses holding arrays use
#   eq=False because elementwise == on arrays does not produce a bool.
#
# VECH CONVENTION:
#   Every packed lower-triangular factor in this file (SFParams.vechC,
#   RPParams.vechL) stacks the COLUMNS of the lower triangle:
#       [[a, 0], [b, c]]  ->  (a, b, c)
#   See core/numerics.py for the index helpers.
# =============================================================================

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from core.errors import ConfigurationError


# -----------------------------------------------------------------------------
# Selectors
# -----------------------------------------------------------------------------
class PointKind(str, Enum):
    """Where the uniforms of a stream come from."""

    PSEUDORANDOM = "pseudorandom"
    SCRAMBLED_NET = "scrambled_net"


class Method(str, Enum):
    """Which gradient estimator drives the optimisation."""

    SF_MLMC = "sf_mlmc"
    RP_MLMC = "rp_mlmc"
    VBIL = "vbil"
    VBSL = "vbsl"

    @property
    def uses_score(self) -> bool:
        return self is not Method.RP_MLMC


class Placement(str, Enum):
    """Which stage of the nested simulation uses scrambled nets."""

    NONE = "none"
    INNER = "inner"
    OUTER = "outer"
    BOTH = "both"

    @property
    def inner_rqmc(self) -> bool:
        return self in (Placement.INNER, Placement.BOTH)

    @property
    def outer_rqmc(self) -> bool:
        return self in (Placement.OUTER, Placement.BOTH)


# -----------------------------------------------------------------------------
# PointStream — an immutable descriptor of a reproducible uniform source
# -----------------------------------------------------------------------------
# Two descriptors that compare equal produce byte-identical points.  The
# `lineage` records the chain of child indices that led here from a root
# stream; together with replicate_index it is the spawn key handed to
# numpy's SeedSequence, so every branch gets an independent randomization.
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class PointStream:
    kind: PointKind
    dimension: int
    seed: int
    replicate_index: int = 0
    lineage: tuple[int, ...] = ()
    scramble: bool = True

    @property
    def key(self) -> tuple[int, ...]:
        """Full spawn key (lineage plus own replicate index)."""
        return self.lineage + (self.replicate_index,)


@dataclass(eq=False)
class SlopeFit:
    """Least-squares fit of log2(variance) against log2(sample size)."""

    slope: float
    degenerate: bool
    log2_sizes: np.ndarray
    log2_variances: np.ndarray


# -----------------------------------------------------------------------------
# MLMC
# -----------------------------------------------------------------------------
@dataclass(eq=False)
class Correction:
    """One draw of an antithetic level correction.

    value is a float for the log-likelihood correction and a p-vector for
    the likelihood-ratio (gradient) correction.
    """

    level: int
    weight: float
    value: Union[float, np.ndarray]
    inner_cost: int


@dataclass(eq=False)
class DecayFit:
    """Empirical decay of per-level second moments: E[|.|^2] ~ 2^(-r*level)."""

    r: float
    kind: str
    levels: np.ndarray
    log2_moments: np.ndarray


# -----------------------------------------------------------------------------
# Gaussian variational family
# -----------------------------------------------------------------------------
@dataclass(eq=False)
class SFParams:
    """λ = (μ, vech C), C the lower Cholesky factor of the PRECISION."""

    mu: np.ndarray
    vechC: np.ndarray

    @property
    def p(self) -> int:
        return int(self.mu.shape[0])

    @property
    def d_lambda(self) -> int:
        return self.p + self.p * (self.p + 1) // 2


@dataclass(eq=False)
class RPParams:
    """λ = (μ, vech L), L the lower Cholesky factor of the COVARIANCE."""

    mu: np.ndarray
    vechL: np.ndarray

    @property
    def p(self) -> int:
        return int(self.mu.shape[0])

    @property
    def d_lambda(self) -> int:
        return self.p + self.p * (self.p + 1) // 2


VariationalParams = Union[SFParams, RPParams]


@dataclass(eq=False)
class ControlVariate:
    """Per-coordinate constants c subtracted from the SF payoff."""

    c: np.ndarray
    sample_count: int = 0

    @classmethod
    def zeros(cls, d_lambda: int) -> "ControlVariate":
        return cls(c=np.zeros(d_lambda), sample_count=0)


# -----------------------------------------------------------------------------
# Baseline configurations
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class VbilConfig:
    """Fixed inner sample count for the plug-in log-likelihood."""

    N: int = 16

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError(f"VBIL needs N >= 1, got {self.N}")


@dataclass(frozen=True)
class SyntheticLikConfig:
    """Simulations per synthetic-likelihood evaluation."""

    N: int
    d: int

    def __post_init__(self):
        if self.N <= self.d + 2:
            raise ConfigurationError(
                f"synthetic likelihood needs N > d + 2 (N={self.N}, d={self.d})"
            )


@dataclass(eq=False)
class AbcSample:
    """Accepted parameter draws from ABC acceptance-rejection."""

    thetas: np.ndarray                 # (n_accepted, p)
    accepted: int
    proposed: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass(eq=False)
class SixCityData:
    """Binary wheeze responses, one row per child, one column per visit."""

    ids: list[int]
    y: np.ndarray                      # (n, J) in {0, 1}
    age: np.ndarray                    # (n, J) centred age
    smoking: np.ndarray                # (n,) maternal smoking indicator

    @property
    def n_individuals(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_visits(self) -> int:
        return int(self.y.shape[1])


# -----------------------------------------------------------------------------
# Engine outputs
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ElboEstimate:
    value: float
    std_error: float
    samples: int


@dataclass
class IterationRecord:
    """One optimisation step.

    `lam` is the flat parameter vector at which the ELBO was estimated
    (before this iteration's update).  `stream_key` is the spawn key of the
    iteration stream; with the run seed it reproduces every draw.
    """

    iteration: int
    lam: list[float]
    grad_norm: float
    elbo: float
    elbo_se: float
    cost: int
    cumulative_cost: int
    mean_level: float
    resampled: int
    stream_key: tuple[int, ...]
    wall_time: float


@dataclass
class RunTrace:
    """Everything a finished run produced, ready for report.py."""

    method: str
    model: str
    seed: int
    parameterization: str              # "sf" or "rp"
    config: dict
    records: list[IterationRecord] = field(default_factory=list)
    final_params: Optional[VariationalParams] = None
    stopped_early: bool = False
    tail_window: int = 50

    @property
    def total_cost(self) -> int:
        return self.records[-1].cumulative_cost if self.records else 0

    @property
    def tail_elbo(self) -> float:
        """Mean ELBO estimate over the last `tail_window` iterations."""
        if not self.records:
            return float("nan")
        tail = self.records[-self.tail_window:]
        return float(np.mean([r.elbo for r in tail]))


@dataclass(eq=False)
class VarianceTable:
    """Per-coordinate variances of the gradient estimator, one row per placement.

    `std_errors` uses the normal-theory approximation Var·sqrt(2/(R-1)).
    """

    placements: list[str]
    coordinates: list[str]
    variances: np.ndarray              # (n_placements, d_lambda)
    means: np.ndarray                  # (n_placements, d_lambda)
    repetitions: int

    @property
    def std_errors(self) -> np.ndarray:
        return self.variances * np.sqrt(2.0 / (self.repetitions - 1))

    def row(self, placement: str) -> np.ndarray:
        return self.variances[self.placements.index(placement)]
