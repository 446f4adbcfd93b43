# =============================================================================
# core/engine.py  —  Stochastic-Gradient VB Driver
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Runs the optimisation loop for every method behind one function:
#
#     run(config)  →  RunTrace
#       SF_MLMC  score-function gradient, unbiased MLMC log-likelihood
#       RP_MLMC  reparameterization gradient, unbiased MLMC ∇ log-likelihood
#       VBIL     score-function gradient, plug-in log p̂_N (biased)
#       VBSL     score-function gradient, synthetic log-likelihood
#
# ONE ITERATION (t = 0, 1, ...):
#   1. it = child(root, t); streams wired by rqmc_placement(placement, it)
#   2. draw S outer θ's and levels, evaluate the corrections
#   3. ELBO estimate from the same draws (or fresh ones if fresh_elbo)
#   4. gradient:
#        SF  mean_i score_i · (ξ_i - c), with c fitted on the PREVIOUS
#            iteration's draws; at t = 0 the draws only initialise c
#        RP  mean_i (G_i, vech(G_i u_iᵀ))
#   5. λ ← λ + step(t, gradient); clamp Cholesky diagonals at 1e-8
#
#   Each IterationRecord stores λ^(t) (the point the ELBO was estimated at),
#   the draw cost Σ M_{I_i}, and the iteration stream key for replay.
#
# ERROR POLICY:
#   An EstimatorDomainError aborts the run with its iteration attached.
#   With skip_bad_draws=True the offending draw's inner sample is redrawn
#   instead (logged and counted in IterationRecord.resampled).
# =============================================================================

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from core import gaussian_family
from core.baselines import vbsl_terms
from core.config import RunConfig, config_to_dict
from core.errors import CapabilityError, ConfigurationError, EstimatorDomainError
from core.estimators import (
    draw_batch,
    elbo_terms,
    estimate_elbo,
    plug_in_distribution,
    rp_gradient_rows,
    rqmc_placement,
    sf_gradient_rows,
    summarize_elbo,
)
from core.mlmc import LevelDistribution
from core.models import (
    ControlVariate,
    IterationRecord,
    Method,
    PointStream,
    RunTrace,
    SyntheticLikConfig,
    VariationalParams,
)
from core.optimizers import build_optimizer
from core.problems import ModelSpec, ToyModel, build_model
from core.qmc import child, root_stream

logger = logging.getLogger(__name__)


# =============================================================================
# Stopping rule
# =============================================================================
class EarlyStop:
    """Stop when the windowed ELBO mean improves by < tol `patience` times in a row.

    Windows are consecutive, non-overlapping blocks of `window` iterations.
    """

    def __init__(self, window: int = 50, tol: float = 1e-3, patience: int = 3):
        self.window = window
        self.tol = tol
        self.patience = patience
        self._block: list[float] = []
        self._previous: Optional[float] = None
        self.strikes = 0

    def update(self, elbo: float) -> bool:
        self._block.append(float(elbo))
        if len(self._block) < self.window:
            return False
        mean = float(np.mean(self._block))
        self._block = []
        if self._previous is not None:
            self.strikes = self.strikes + 1 if mean - self._previous < self.tol else 0
        self._previous = mean
        return self.strikes >= self.patience


# =============================================================================
# Helpers
# =============================================================================
def initial_params(config: RunConfig, model: ModelSpec, kind: str) -> VariationalParams:
    """Starting q from [init], falling back to the model's default."""
    mean, cov = model.default_init()
    if config.init.mean is not None:
        mean = np.asarray(config.init.mean, dtype=float)
    if config.init.cov is not None:
        cov = np.asarray(config.init.cov, dtype=float)
    elif config.init.scale is not None:
        cov = config.init.scale ** 2 * np.eye(model.p)
    if mean.shape != (model.p,) or cov.shape != (model.p, model.p):
        raise ConfigurationError(
            f"init mean/cov shapes {mean.shape}/{cov.shape} do not match p={model.p}"
        )
    return gaussian_family.from_moments(kind, mean, cov)


def _distribution(config: RunConfig) -> LevelDistribution:
    if config.method is Method.VBIL:
        return plug_in_distribution(config.vbil_n)
    return config.levels.distribution()


@dataclass
class _Step:
    grad: Optional[np.ndarray]         # None: no update this iteration
    xi: np.ndarray                     # per-draw ELBO terms
    cost: int
    mean_level: float
    resampled: int


def gradient_draws(
    params: VariationalParams,
    config: RunConfig,
    model: ModelSpec,
    stream: PointStream,
    cv: Optional[ControlVariate] = None,
) -> np.ndarray:
    """The S per-draw gradient rows one iteration at `stream` would average."""
    if config.method is Method.VBSL:
        theta, xi = vbsl_terms(
            params, model, SyntheticLikConfig(N=config.vbsl_n, d=model.kernel.d), stream, config.outer_samples
        )
        scores = np.atleast_2d(gaussian_family.score(params, theta))
        return gaussian_family.apply_control_variate(scores, xi, cv or ControlVariate.zeros(params.d_lambda))
    plan = rqmc_placement(config.placement, stream, model.p, model.inner_dimension)
    with_rp = config.method is Method.RP_MLMC
    batch = draw_batch(
        params, model, _distribution(config), config.outer_samples, plan, with_rp,
        skip_bad_draws=config.skip_bad_draws, threads=config.threads,
    )
    if with_rp:
        return rp_gradient_rows(params, model, batch)
    return sf_gradient_rows(params, model, batch, cv)


# =============================================================================
# Driver
# =============================================================================
def _optimize(
    config: RunConfig,
    model: ModelSpec,
    params: VariationalParams,
    step_fn: Callable[[VariationalParams, PointStream, int], _Step],
) -> RunTrace:
    kind = gaussian_family.kind_of(params)
    trace = RunTrace(
        method=config.method.value,
        model=model.name,
        seed=config.seed,
        parameterization=kind,
        config=config_to_dict(config),
        tail_window=config.tail_window,
    )
    optimizer = build_optimizer(config.optimizer)
    stopper = EarlyStop(config.stopping.window, config.stopping.tol, config.stopping.patience)
    root = root_stream(config.seed)
    cumulative = 0
    start = time.perf_counter()
    logger.info(
        "run start: method=%s model=%s seed=%d S=%d T=%d placement=%s",
        config.method.value, model.name, config.seed, config.outer_samples,
        config.iterations, config.placement.value,
    )

    for t in range(config.iterations):
        it = child(root, t)
        try:
            step = step_fn(params, it, t)
            if config.fresh_elbo:
                elbo = _fresh_elbo(params, model, config, it)
            else:
                elbo = summarize_elbo(step.xi) if step.xi.shape[0] >= 2 else None
        except EstimatorDomainError as exc:
            raise exc.with_context(iteration=t) from exc

        lam = gaussian_family.flat(params)
        grad_norm = 0.0
        if step.grad is not None:
            grad_norm = float(np.linalg.norm(step.grad))
            updated = gaussian_family.from_flat(kind, lam + optimizer.step(t, step.grad), params.p)
            params = gaussian_family.clamp_diagonal(updated)

        cumulative += step.cost
        record = IterationRecord(
            iteration=t,
            lam=lam.tolist(),
            grad_norm=grad_norm,
            elbo=float(step.xi.mean()) if elbo is None else elbo.value,
            elbo_se=float("nan") if elbo is None else elbo.std_error,
            cost=step.cost,
            cumulative_cost=cumulative,
            mean_level=step.mean_level,
            resampled=step.resampled,
            stream_key=it.key,
            wall_time=time.perf_counter() - start,
        )
        trace.records.append(record)

        if t % config.log_every == 0 or t == config.iterations - 1:
            logger.info(
                "iter %d  elbo=%.4f ± %.4f  |grad|=%.3g  cost=%d",
                t, record.elbo, record.elbo_se, grad_norm, cumulative,
            )
        if config.stopping.early_stop and stopper.update(record.elbo):
            trace.stopped_early = True
            logger.info("early stop at iteration %d (windowed ELBO flat)", t)
            break

    trace.final_params = params
    logger.info(
        "run done: %d iterations, tail ELBO %.4f, total cost %d",
        len(trace.records), trace.tail_elbo, trace.total_cost,
    )
    return trace


def _fresh_elbo(params, model, config: RunConfig, it: PointStream):
    plan = rqmc_placement(config.placement, it, model.p, model.inner_dimension)
    return estimate_elbo(
        params, model, _distribution(config), config.outer_samples, config.placement,
        plan.fresh, threads=config.threads,
    )


def _score_function_loop(config: RunConfig, model: ModelSpec, dist: LevelDistribution) -> RunTrace:
    """Shared SF loop for SF_MLMC and VBIL (they differ only in `dist`)."""
    params = initial_params(config, model, "sf")
    state = {"cv": None}

    def step_fn(params, it, t):
        plan = rqmc_placement(config.placement, it, model.p, model.inner_dimension)
        batch = draw_batch(
            params, model, dist, config.outer_samples, plan, False,
            skip_bad_draws=config.skip_bad_draws, threads=config.threads,
        )
        xi = elbo_terms(params, model, batch)
        grad = _sf_update(params, batch.theta, xi, t, config, state)
        return _Step(grad, xi, batch.cost, batch.mean_level, batch.resampled)

    return _optimize(config, model, params, step_fn)


def _sf_update(params, theta, xi, t, config: RunConfig, state: dict) -> Optional[np.ndarray]:
    scores = np.atleast_2d(gaussian_family.score(params, theta))
    if not config.control_variates or xi.shape[0] < 2:
        return gaussian_family.apply_control_variate(
            scores, xi, ControlVariate.zeros(params.d_lambda)
        ).mean(axis=0)
    previous = state["cv"]
    state["cv"] = gaussian_family.fit_control_variate(scores, xi)
    if t == 0 or previous is None:
        return None
    return gaussian_family.apply_control_variate(scores, xi, previous).mean(axis=0)


def run_sf(config: RunConfig, model: Optional[ModelSpec] = None) -> RunTrace:
    """Score-function VB with the unbiased MLMC log-likelihood."""
    if config.method is not Method.SF_MLMC:
        raise ConfigurationError(f"run_sf needs method=sf_mlmc, got {config.method.value}")
    model = model or build_model(config.model)
    return _score_function_loop(config, model, config.levels.distribution())


def run_vbil(config: RunConfig, model: Optional[ModelSpec] = None) -> RunTrace:
    """Score-function VB with the plug-in log p̂_N (fixed N = vbil_n)."""
    if config.method is not Method.VBIL:
        raise ConfigurationError(f"run_vbil needs method=vbil, got {config.method.value}")
    model = model or build_model(config.model)
    return _score_function_loop(config, model, plug_in_distribution(config.vbil_n))


def run_rp(config: RunConfig, model: Optional[ModelSpec] = None) -> RunTrace:
    """Reparameterization VB with the unbiased MLMC gradient of log p."""
    if config.method is not Method.RP_MLMC:
        raise ConfigurationError(f"run_rp needs method=rp_mlmc, got {config.method.value}")
    model = model or build_model(config.model)
    if not model.supports_rp:
        raise CapabilityError(
            f"model '{model.name}' has no gradient chain; use method=sf_mlmc"
        )
    params = initial_params(config, model, "rp")
    dist = config.levels.distribution()

    def step_fn(params, it, t):
        plan = rqmc_placement(config.placement, it, model.p, model.inner_dimension)
        batch = draw_batch(
            params, model, dist, config.outer_samples, plan, True,
            skip_bad_draws=config.skip_bad_draws, threads=config.threads,
        )
        xi = elbo_terms(params, model, batch)
        grad = rp_gradient_rows(params, model, batch).mean(axis=0)
        return _Step(grad, xi, batch.cost, batch.mean_level, batch.resampled)

    return _optimize(config, model, params, step_fn)


def run_vbsl(config: RunConfig, model: Optional[ModelSpec] = None) -> RunTrace:
    """Score-function VB with the unbiased synthetic log-likelihood."""
    if config.method is not Method.VBSL:
        raise ConfigurationError(f"run_vbsl needs method=vbsl, got {config.method.value}")
    model = model or build_model(config.model)
    if model.kernel is None:
        raise CapabilityError(f"model '{model.name}' has no summary statistics for VBSL")
    sl_config = SyntheticLikConfig(N=config.vbsl_n, d=model.kernel.d)
    params = initial_params(config, model, "sf")
    state = {"cv": None}

    def step_fn(params, it, t):
        theta, xi = vbsl_terms(params, model, sl_config, it, config.outer_samples)
        grad = _sf_update(params, theta, xi, t, config, state)
        return _Step(grad, xi, config.outer_samples * config.vbsl_n, 0.0, 0)

    return _optimize(config, model, params, step_fn)


_RUNNERS = {
    Method.SF_MLMC: run_sf,
    Method.RP_MLMC: run_rp,
    Method.VBIL: run_vbil,
    Method.VBSL: run_vbsl,
}


def run(config: RunConfig, model: Optional[ModelSpec] = None) -> RunTrace:
    """Dispatch on config.method."""
    return _RUNNERS[config.method](config, model)


# =============================================================================
# Oracles
# =============================================================================
def analytic_elbo_maximizer(model: ToyModel) -> tuple[float, float]:
    """(mean, variance) maximising the toy model's analytic ELBO numerically."""

    def objective(x):
        return -model.analytic_elbo(float(x[0]), float(np.exp(x[1])))

    result = minimize(objective, x0=np.array([0.0, 0.0]), method="Nelder-Mead",
                      options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 10_000})
    return float(result.x[0]), float(np.exp(result.x[1]))
