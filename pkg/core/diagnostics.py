# =============================================================================
# core/diagnostics.py  —  Decay-Rate Sweeps & Placement Variance Tables
# =============================================================================
#
# rates_table()     log2 E[|Δ_ℓ|²] per level for MC and RQMC inner draws,
#                   with the fitted decay rate r of each sweep.
# variance_table()  per-coordinate variance of the gradient estimator at the
#                   initial λ for each RQMC placement (NONE / INNER / OUTER /
#                   BOTH), from independent repetitions.
#
# Repetition r of every placement uses the stream child(root, r), so the
# placements are compared on common random numbers wherever their draws
# are pseudorandom.
# =============================================================================

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from core import gaussian_family
from core.config import RqmcConfig, RunConfig
from core.engine import gradient_draws, initial_params
from core.errors import ConfigurationError
from core.mlmc import LevelDistribution, decay_rate
from core.models import Method, Placement, PointKind, VarianceTable
from core.problems import ModelSpec, build_model
from core.qmc import child, root_stream

logger = logging.getLogger(__name__)


def rates_table(
    model: ModelSpec,
    theta_source,
    dist: LevelDistribution,
    max_level: int = 7,
    replicates: int = 200,
    kinds: Optional[Sequence[str]] = None,
    seed: int = 0,
    outer_kind: PointKind = PointKind.SCRAMBLED_NET,
) -> list[dict]:
    """Rows {kind, inner, level, log2_moment, r} for MC and RQMC inner draws.

    kinds defaults to ("elbo", "rp") for models with a gradient chain and
    ("elbo", "sf") otherwise.
    """
    if kinds is None:
        kinds = ("elbo", "rp") if model.supports_rp else ("elbo", "sf")
    rows = []
    for kind in kinds:
        for inner_kind in (PointKind.PSEUDORANDOM, PointKind.SCRAMBLED_NET):
            fit = decay_rate(
                model, theta_source, dist, max_level, replicates,
                kind=kind, inner_kind=inner_kind, seed=seed, outer_kind=outer_kind,
            )
            logger.info("decay rate: kind=%s inner=%s r=%.3f", kind, inner_kind.value, fit.r)
            for level, moment in zip(fit.levels, fit.log2_moments):
                rows.append({
                    "kind": kind,
                    "inner": inner_kind.value,
                    "level": int(level),
                    "log2_moment": float(moment),
                    "r": fit.r,
                })
    return rows


def variance_table(
    config: RunConfig,
    repetitions: int = 50,
    model: Optional[ModelSpec] = None,
    placements: Sequence[Placement] = tuple(Placement),
) -> VarianceTable:
    """Empirical variance of each gradient coordinate per placement."""
    if repetitions < 10:
        raise ConfigurationError(f"variance_table needs >= 10 repetitions, got {repetitions}")
    model = model or build_model(config.model)
    kind = "rp" if config.method is Method.RP_MLMC else "sf"
    params = initial_params(config, model, kind)
    root = root_stream(config.seed)

    variances, means = [], []
    for placement in placements:
        placed = replace(config, rqmc=RqmcConfig(placement=placement))
        estimates = np.stack([
            gradient_draws(params, placed, model, child(root, r)).mean(axis=0)
            for r in range(repetitions)
        ])
        variances.append(estimates.var(axis=0, ddof=1))
        means.append(estimates.mean(axis=0))
        logger.info("variance table: placement=%s done (%d repetitions)", placement.value, repetitions)

    return VarianceTable(
        placements=[p.value for p in placements],
        coordinates=gaussian_family.coordinate_names(kind, model.p),
        variances=np.stack(variances),
        means=np.stack(means),
        repetitions=repetitions,
    )
