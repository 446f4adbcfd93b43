# =============================================================================
# core/estimators.py  —  One Iteration's Worth of Draws and Gradients
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Given λ, a model, a level law and an iteration stream, it produces the S
#   outer draws of the SF and RP loops and turns them into per-draw rows:
#
#     draw_batch()        θ_i, level I_i, Δψ_i (and Δψ̃_i for RP), cost
#     elbo_terms()        Δψ_i/w_i + log p(θ_i) - log q_λ(θ_i)
#     sf_gradient_rows()  ∇λ log q_λ(θ_i) ⊙ (ξ_i - c)
#     rp_gradient_rows()  (G_i, vech(G_i u_iᵀ)),
#                         G_i = Δψ̃_i/w_i + ∇log p(θ_i) - ∇θ log q_λ(θ_i)
#
#   The engine averages rows into gradients; the diagnostics module keeps the
#   rows to measure per-coordinate variances.
#
# STREAM WIRING (rqmc_placement):
#
#     iteration ─┬─ child 0  outer normals   dim p   (net if OUTER/BOTH)
#                ├─ child 1  level uniforms  dim 1   (always pseudorandom)
#                ├─ child 2 ─ child i  inner draws of draw i, dim s
#                │                     (net if INNER/BOTH)
#                └─ child 3  fresh ELBO draws (same layout, one level down)
#
#   The layout does not depend on the placement, so NONE / INNER / OUTER
#   runs with one seed share their pseudorandom draws.
#
# PLUG-IN ESTIMATORS:
#   A LevelDistribution with max_level=0 and M0=N puts all mass on level 0,
#   whose "correction" is log of the N-sample mean.  The VBIL baseline
#   reuses every function here through plug_in_distribution(N).
# =============================================================================

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core import gaussian_family
from core.errors import ConfigurationError, EstimatorDomainError
from core.mlmc import LevelDistribution, coupled_corrections, sample_level
from core.models import (
    ControlVariate,
    ElboEstimate,
    Placement,
    PointKind,
    PointStream,
    SFParams,
    RPParams,
    VariationalParams,
)
from core.qmc import child, generate, normals

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 10


# =============================================================================
# Stream plan
# =============================================================================
@dataclass(frozen=True)
class StreamPlan:
    placement: Placement
    outer: PointStream
    levels: PointStream
    inner_root: PointStream
    fresh: PointStream

    def inner(self, index: int) -> PointStream:
        """Inner stream of outer draw `index`."""
        return child(self.inner_root, index)


def rqmc_placement(
    placement: Placement,
    iteration_stream: PointStream,
    p: int,
    inner_dimension: int,
) -> StreamPlan:
    """Wire the streams of one iteration for the chosen RQMC placement."""
    outer_kind = PointKind.SCRAMBLED_NET if placement.outer_rqmc else PointKind.PSEUDORANDOM
    inner_kind = PointKind.SCRAMBLED_NET if placement.inner_rqmc else PointKind.PSEUDORANDOM
    return StreamPlan(
        placement=placement,
        outer=child(iteration_stream, 0, kind=outer_kind, dimension=p),
        levels=child(iteration_stream, 1, kind=PointKind.PSEUDORANDOM, dimension=1),
        inner_root=child(iteration_stream, 2, kind=inner_kind, dimension=inner_dimension),
        fresh=child(iteration_stream, 3),
    )


def plug_in_distribution(N: int) -> LevelDistribution:
    """Level law degenerate at 0 with M0 = N: Δψ becomes log p̂_N."""
    return LevelDistribution(alpha=2.0, M0=N, max_level=0)


# =============================================================================
# Draws
# =============================================================================
@dataclass(eq=False)
class DrawBatch:
    """S outer draws and their corrections."""

    z: np.ndarray                      # (S, p) standard normals (RP: u_i)
    theta: np.ndarray                  # (S, p)
    levels: np.ndarray                 # (S,)
    weights: np.ndarray                # (S,) w_{I_i}
    dpsi: np.ndarray                   # (S,)
    dpsi_tilde: Optional[np.ndarray]   # (S, p) or None
    cost: int                          # Σ M_{I_i}
    resampled: int

    @property
    def size(self) -> int:
        return int(self.theta.shape[0])

    @property
    def loglik_terms(self) -> np.ndarray:
        """Δψ_i / w_i, unbiased draws of log p(y*|θ_i)."""
        return self.dpsi / self.weights

    @property
    def mean_level(self) -> float:
        return float(np.mean(self.levels))


def _evaluate_draw(model, theta, level, inner, dist, with_rp, skip_bad_draws, index):
    stream = inner
    attempts = 0
    while True:
        try:
            sf, rp = coupled_corrections(model, theta, level, stream, dist, with_rp)
            return sf, rp, attempts
        except EstimatorDomainError as exc:
            if not skip_bad_draws or attempts >= MAX_RESAMPLES:
                raise
            attempts += 1
            logger.warning("draw %d: %s; resampling inner draws (attempt %d)", index, exc, attempts)
            stream = child(inner, attempts)


def outer_draws(params: VariationalParams, outer: PointStream, S: int) -> tuple[np.ndarray, np.ndarray]:
    """(z, θ) for S outer draws; SF form solves Cᵀx = z, RP form uses μ + Lz."""
    z = normals(outer, S)
    return z, np.atleast_2d(gaussian_family.sample(params, z))


def draw_batch(
    params: VariationalParams,
    model,
    dist: LevelDistribution,
    S: int,
    plan: StreamPlan,
    with_rp: bool,
    *,
    skip_bad_draws: bool = False,
    threads: int = 1,
) -> DrawBatch:
    """Draw θ_1..θ_S and levels, then evaluate every correction.

    Draws are independent tasks; with threads > 1 they run on a thread pool
    and are collected in index order, so results do not depend on `threads`.
    """
    if S < 1:
        raise ConfigurationError(f"outer sample size must be >= 1, got {S}")
    if threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}")
    z, theta = outer_draws(params, plan.outer, S)
    levels = np.atleast_1d(sample_level(dist, generate(plan.levels, S)[:, 0]))

    def task(i: int):
        return _evaluate_draw(
            model, theta[i], int(levels[i]), plan.inner(i), dist, with_rp, skip_bad_draws, i
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(S)))
    else:
        results = [task(i) for i in range(S)]

    dpsi = np.array([sf.value for sf, _, _ in results])
    weights = np.array([sf.weight for sf, _, _ in results])
    dpsi_tilde = np.stack([rp.value for _, rp, _ in results]) if with_rp else None
    return DrawBatch(
        z=z,
        theta=theta,
        levels=levels,
        weights=weights,
        dpsi=dpsi,
        dpsi_tilde=dpsi_tilde,
        cost=int(sum(sf.inner_cost for sf, _, _ in results)),
        resampled=int(sum(n for _, _, n in results)),
    )


# =============================================================================
# Per-draw rows
# =============================================================================
def elbo_terms(params: VariationalParams, model, batch: DrawBatch) -> np.ndarray:
    return (
        batch.loglik_terms
        + np.atleast_1d(model.prior_logpdf(batch.theta))
        - np.atleast_1d(gaussian_family.logq(params, batch.theta))
    )


def summarize_elbo(terms: np.ndarray) -> ElboEstimate:
    terms = np.asarray(terms, dtype=float)
    if terms.shape[0] < 2:
        raise ConfigurationError("ELBO standard errors need S >= 2")
    return ElboEstimate(
        value=float(terms.mean()),
        std_error=float(terms.std(ddof=1) / np.sqrt(terms.shape[0])),
        samples=int(terms.shape[0]),
    )


def sf_gradient_rows(
    params: SFParams,
    model,
    batch: DrawBatch,
    cv: Optional[ControlVariate] = None,
    xi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-draw SF gradients ∇λ log q_λ(θ_i) (ξ_i - c), shape (S, d_λ)."""
    if xi is None:
        xi = elbo_terms(params, model, batch)
    scores = np.atleast_2d(gaussian_family.score(params, batch.theta))
    if cv is None:
        cv = ControlVariate.zeros(params.d_lambda)
    return gaussian_family.apply_control_variate(scores, xi, cv)


def rp_gradient_rows(params: RPParams, model, batch: DrawBatch) -> np.ndarray:
    """Per-draw RP gradients (G_i, vech(G_i u_iᵀ)), shape (S, d_λ)."""
    if batch.dpsi_tilde is None:
        raise ConfigurationError("RP gradient rows need a batch evaluated with_rp=True")
    G = (
        batch.dpsi_tilde / batch.weights[:, None]
        + np.atleast_2d(model.prior_grad(batch.theta))
        - np.atleast_2d(gaussian_family.grad_logq_theta(params, batch.theta))
    )
    return gaussian_family.rp_assemble(G, batch.z)


# =============================================================================
# ELBO
# =============================================================================
def estimate_elbo(
    params: VariationalParams,
    model,
    dist: LevelDistribution,
    S: int,
    placement: Placement,
    stream: PointStream,
    *,
    threads: int = 1,
) -> ElboEstimate:
    """Mean and standard error of S single-term ELBO draws at λ."""
    if S < 2:
        raise ConfigurationError(f"estimate_elbo needs S >= 2, got {S}")
    plan = rqmc_placement(placement, stream, model.p, model.inner_dimension)
    batch = draw_batch(params, model, dist, S, plan, with_rp=False, threads=threads)
    return summarize_elbo(elbo_terms(params, model, batch))
