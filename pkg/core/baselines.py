# =============================================================================
# core/baselines.py  —  Comparison Methods: VBIL, VBSL, ABC Rejection
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Three reference points for the unbiased MLMC estimators:
#
#   VBIL   plug-in log p̂_N(y*|θ) with a fixed N inside the SF gradient.
#          E[log p̂_N] ≤ log p (Jensen), so the objective it climbs sits
#          below the true ELBO and its gradient is biased.
#
#   VBSL   Gaussian synthetic likelihood of the summaries, estimated from N
#          simulations with the unbiased log-density estimator
#            ℓ̂_N = -d/2 log 2π - ½[log|Σ̂| + d log((N-1)/2) - Σ ψ((N-i)/2)]
#                  - ½[(N-d-2)/(N-1) (s-μ̂)ᵀΣ̂⁻¹(s-μ̂) - d/N]
#
#   ABC-AR exact rejection sampling from the ABC posterior: θ ~ prior,
#          y ~ p(y|θ), accept with probability K_h(𝒮(y), 𝒮(y*)) / K_max.
#
# STREAMS:
#   Everything draws from PointStream descriptors, like the MLMC path, so
#   every baseline run replays from its seed.
# =============================================================================

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from core.errors import AbcRejectionError, CapabilityError, ConfigurationError
from core.estimators import (
    draw_batch,
    elbo_terms,
    outer_draws,
    plug_in_distribution,
    rqmc_placement,
    sf_gradient_rows,
    summarize_elbo,
)
from core import gaussian_family
from core.mlmc import CHUNK_ELEMENTS
from core.models import (
    AbcSample,
    ControlVariate,
    ElboEstimate,
    Placement,
    PointKind,
    PointStream,
    SFParams,
    SyntheticLikConfig,
    VbilConfig,
)
from core.numerics import LOG_2PI, cholesky, digamma, solve_lower
from core.problems import log_gaussian_kernel
from core.qmc import child, generate, stream_rng

logger = logging.getLogger(__name__)


# =============================================================================
# VBIL
# =============================================================================
def vbil_objective_draw(
    params,
    model,
    config: VbilConfig,
    stream: PointStream,
    S: int = 100,
    placement: Placement = Placement.NONE,
    threads: int = 1,
) -> ElboEstimate:
    """Estimate of the plug-in objective E_q[log p̂_N + log p - log q]."""
    plan = rqmc_placement(placement, stream, model.p, model.inner_dimension)
    batch = draw_batch(params, model, plug_in_distribution(config.N), S, plan, False, threads=threads)
    return summarize_elbo(elbo_terms(params, model, batch))


def vbil_gradient(
    params: SFParams,
    model,
    config: VbilConfig,
    stream: PointStream,
    S: int = 100,
    cv: Optional[ControlVariate] = None,
    placement: Placement = Placement.NONE,
    threads: int = 1,
) -> np.ndarray:
    """SF gradient with log p̂_N in place of log p(y*|θ) (biased for finite N)."""
    plan = rqmc_placement(placement, stream, model.p, model.inner_dimension)
    batch = draw_batch(params, model, plug_in_distribution(config.N), S, plan, False, threads=threads)
    return sf_gradient_rows(params, model, batch, cv).mean(axis=0)


# =============================================================================
# VBSL
# =============================================================================
def synthetic_loglik(s_obs, summaries: np.ndarray) -> float:
    """ℓ̂_N evaluated on an (N, d) block of simulated summaries."""
    summaries = np.asarray(summaries, dtype=float)
    s_obs = np.atleast_1d(np.asarray(s_obs, dtype=float))
    N, d = summaries.shape
    SyntheticLikConfig(N=N, d=d)
    mu_hat = summaries.mean(axis=0)
    sigma_hat = np.atleast_2d(np.cov(summaries, rowvar=False, ddof=1))
    L = cholesky(0.5 * (sigma_hat + sigma_hat.T))
    z = solve_lower(L.dense(), s_obs - mu_hat)
    quad = float(z @ z)
    log_det = 2.0 * L.log_det()
    correction = d * np.log(0.5 * (N - 1)) - float(np.sum(digamma(0.5 * (N - np.arange(1, d + 1)))))
    return float(
        -0.5 * d * LOG_2PI
        - 0.5 * (log_det + correction)
        - 0.5 * ((N - d - 2) / (N - 1) * quad - d / N)
    )


def vbsl_loglik(s_obs, theta, model, config: SyntheticLikConfig, stream: PointStream) -> float:
    """Unbiased estimate of log N(s_obs; μ(θ), Σ(θ)) from config.N simulations.

    Raises:
        ConfigurationError: N ≤ d + 2 or s_obs of the wrong length.
        DecompositionError: the sample covariance is singular.
    """
    s_obs = np.atleast_1d(np.asarray(s_obs, dtype=float))
    if s_obs.shape != (config.d,):
        raise ConfigurationError(f"observed summaries must have length {config.d}, got {s_obs.shape}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    inner = child(stream, 0, kind=PointKind.PSEUDORANDOM, dimension=model.inner_dimension)
    V = generate(inner, config.N)
    summaries = model.simulate_summaries(np.tile(theta, (config.N, 1)), V)
    return synthetic_loglik(s_obs, summaries)


def vbsl_terms(params: SFParams, model, config: SyntheticLikConfig, stream: PointStream, S: int):
    """(θ, ξ) for S outer draws with ξ_i = ℓ̂_N(θ_i) + log p(θ_i) - log q(θ_i)."""
    plan = rqmc_placement(Placement.NONE, stream, model.p, model.inner_dimension)
    _, theta = outer_draws(params, plan.outer, S)
    s_obs = model.observed_summaries
    loglik = np.array([
        vbsl_loglik(s_obs, theta[i], model, config, plan.inner(i)) for i in range(S)
    ])
    xi = (
        loglik
        + np.atleast_1d(model.prior_logpdf(theta))
        - np.atleast_1d(gaussian_family.logq(params, theta))
    )
    return theta, xi


def vbsl_gradient(
    params: SFParams,
    model,
    config: SyntheticLikConfig,
    stream: PointStream,
    S: int = 100,
    cv: Optional[ControlVariate] = None,
) -> np.ndarray:
    theta, xi = vbsl_terms(params, model, config, stream, S)
    scores = np.atleast_2d(gaussian_family.score(params, theta))
    cv = cv or ControlVariate.zeros(params.d_lambda)
    return gaussian_family.apply_control_variate(scores, xi, cv).mean(axis=0)


# =============================================================================
# ABC acceptance-rejection
# =============================================================================
def abc_ar(
    model,
    n_accepted: int,
    stream: PointStream,
    *,
    batch: Optional[int] = None,
    probe_window: int = 1_000_000,
    min_rate: float = 1e-6,
) -> AbcSample:
    """Exact ABC-posterior samples by kernel-ratio rejection.

    Proposals are processed in batches drawn from child(stream, k); accepted
    draws keep proposal order and the first `n_accepted` are returned.
    `proposed` counts proposals up to and including the last one returned.

    Raises:
        AbcRejectionError: after `probe_window` proposals the acceptance rate
            is below `min_rate`.
    """
    if n_accepted < 1:
        raise ConfigurationError(f"n_accepted must be >= 1, got {n_accepted}")
    if model.kernel is None:
        raise CapabilityError(f"model '{model.name}' has no ABC kernel")
    h = model.kernel.h
    s_star = model.observed_summaries
    batch = batch or max(1, min(10_000, CHUNK_ELEMENTS // max(1, model.row_elements)))
    log_k_max = float(np.log(model.kernel.k_max))

    accepted: list[np.ndarray] = []
    n_acc = 0
    proposed = 0
    k = 0
    while n_acc < n_accepted:
        rng = stream_rng(child(stream, k))
        thetas = model.prior_sample(rng, batch)
        V = rng.random((batch, model.inner_dimension))
        log_u = np.log(rng.random(batch))
        sims = model.simulate_summaries(thetas, V)
        keep = log_u < log_gaussian_kernel(sims, s_star, h) - log_k_max
        idx = np.flatnonzero(keep)
        need = n_accepted - n_acc
        if idx.size >= need:
            idx = idx[:need]
            proposed += int(idx[-1]) + 1
        else:
            proposed += batch
        accepted.append(thetas[idx])
        n_acc += idx.size
        k += 1
        if n_acc < n_accepted and proposed >= probe_window and n_acc / proposed < min_rate:
            raise AbcRejectionError(
                f"ABC acceptance rate {n_acc / proposed:.2e} below {min_rate:.0e} "
                f"after {proposed} proposals",
                accepted=n_acc,
                proposed=proposed,
            )
        if k % 50 == 0:
            logger.info("abc-ar: %d/%d accepted after %d proposals", n_acc, n_accepted, proposed)

    thetas = np.concatenate(accepted, axis=0)
    logger.info("abc-ar: done, acceptance rate %.4f", n_acc / proposed)
    return AbcSample(thetas=thetas, accepted=n_acc, proposed=proposed)
