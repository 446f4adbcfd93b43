# =============================================================================
# core/mlmc.py  —  Unbiased Single-Term Multilevel Machinery
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   log p(y*|θ) = log E[f(x; y*) | θ] is a nested quantity: a plain sample
#   mean of f inside the log is biased.  This module removes the bias with a
#   randomized level:
#
#     1. Draw a level I with P(I = ℓ) = w_ℓ = w0·2^(-αℓ)       (sample_level)
#     2. Draw M_ℓ = M0·2^ℓ inner samples and form the antithetic
#        correction Δψ_ℓ = ψ(all) - ½(ψ(first half) + ψ(second half))
#     3. Return Δψ_I / w_I                                      (single_term)
#
#   The same draws also give the likelihood-ratio correction Δψ̃ used by the
#   reparameterization gradient (ratio estimator Σ∇f / Σf).
#
# NUMERICS:
#   Everything is carried in log space.  A batch of rows is summarised per
#   group g by (log Σ f, softmax-weighted ∇log f); two batches merge exactly,
#   so large levels are evaluated in chunks without materialising M_ℓ rows
#   at once.
#
# LEVEL TRUNCATION:
#   Levels are capped at max_level; the tail mass 2^(-α·max_level) is moved
#   onto max_level so the weights still sum to one.
# =============================================================================

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from core import gaussian_family
from core.errors import CapabilityError, ConfigurationError, EstimatorDomainError
from core.models import (
    Correction,
    DecayFit,
    PointKind,
    PointStream,
    RPParams,
    SFParams,
)
from core.qmc import PointSource, child, normals, root_stream, stream_rng

logger = logging.getLogger(__name__)

# Upper bound on array elements touched by one chunk of inner rows.
CHUNK_ELEMENTS = 1 << 22


# =============================================================================
# Level law
# =============================================================================
@dataclass(frozen=True)
class LevelDistribution:
    """Geometric level law with weights w_ℓ = w0·2^(-αℓ), inner sizes M0·2^ℓ."""

    alpha: float
    M0: int
    max_level: int = 20

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ConfigurationError(
                f"alpha must be > 1 for a finite expected cost, got {self.alpha}"
            )
        if self.M0 < 1:
            raise ConfigurationError(f"M0 must be >= 1, got {self.M0}")
        if self.max_level < 0:
            raise ConfigurationError(f"max_level must be >= 0, got {self.max_level}")

    @property
    def w0(self) -> float:
        return 1.0 - 2.0 ** (-self.alpha)

    @cached_property
    def _weights(self) -> np.ndarray:
        levels = np.arange(self.max_level + 1)
        w = self.w0 * 2.0 ** (-self.alpha * levels)
        # Tail mass Σ_{ℓ ≥ L} w_ℓ = 2^(-αL) lands on L.
        w[-1] = 2.0 ** (-self.alpha * self.max_level)
        return w

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.cumsum(self._weights)
        cum[-1] = 1.0
        return cum

    def weights(self) -> np.ndarray:
        return self._weights.copy()

    def weight(self, level: int) -> float:
        if not 0 <= level <= self.max_level:
            raise ConfigurationError(f"level {level} outside 0..{self.max_level}")
        return float(self._weights[level])

    def inner_size(self, level: int) -> int:
        return self.M0 * 2 ** int(level)

    def truncated_expected_cost(self) -> float:
        """Exact E[M_I] under the truncated law."""
        sizes = self.M0 * 2.0 ** np.arange(self.max_level + 1)
        return float(np.dot(self._weights, sizes))


def sample_level(dist: LevelDistribution, u):
    """Inverse-CDF level draw: the smallest L with Σ_{j≤L} w_j > u."""
    u_arr = np.asarray(u, dtype=float)
    levels = np.searchsorted(dist._cumulative, u_arr, side="right")
    levels = np.minimum(levels, dist.max_level)
    return int(levels) if levels.ndim == 0 else levels


def expected_cost(dist: LevelDistribution) -> float:
    """(1 + 1/(2^α - 2))·M0, the mean inner sample count of one draw."""
    return (1.0 + 1.0 / (2.0 ** dist.alpha - 2.0)) * dist.M0


# =============================================================================
# Batch statistics
# =============================================================================
@dataclass
class _Batch:
    lse: np.ndarray                    # (G,) log Σ_m f_mg
    count: int
    ratio: Optional[np.ndarray]        # (G, p) Σ f∇log f / Σ f

    @property
    def log_mean(self) -> np.ndarray:
        return self.lse - np.log(self.count)


def _batch(log_f: np.ndarray, grad_log_f: Optional[np.ndarray]) -> _Batch:
    lse = logsumexp(log_f, axis=0)
    ratio = None
    if grad_log_f is not None:
        weights = np.exp(log_f - lse)
        ratio = np.einsum("mg,mgp->gp", weights, grad_log_f)
    return _Batch(lse=lse, count=log_f.shape[0], ratio=ratio)


def _merge(a: _Batch, b: _Batch) -> _Batch:
    lse = np.logaddexp(a.lse, b.lse)
    ratio = None
    if a.ratio is not None and b.ratio is not None:
        ratio = (
            np.exp(a.lse - lse)[:, None] * a.ratio
            + np.exp(b.lse - lse)[:, None] * b.ratio
        )
    return _Batch(lse=lse, count=a.count + b.count, ratio=ratio)


def _evaluate(model, theta, source: PointSource, rows: int, with_grad: bool, level: int) -> _Batch:
    """Summarise the next `rows` inner draws of `source` at θ."""
    chunk = max(1, CHUNK_ELEMENTS // max(1, model.row_elements))
    result: Optional[_Batch] = None
    remaining = rows
    while remaining > 0:
        n = min(chunk, remaining)
        V = source.take(n)
        log_f = np.asarray(model.log_integrand(theta, V), dtype=float)
        if not np.all(np.isfinite(log_f)):
            raise EstimatorDomainError(
                "integrand is not strictly positive on a drawn sample",
                theta=np.atleast_1d(theta),
                level=level,
            )
        grad = None
        if with_grad:
            grad = np.asarray(model.grad_log_integrand(theta, V), dtype=float)
            if not np.all(np.isfinite(grad)):
                raise EstimatorDomainError(
                    "non-finite integrand gradient", theta=np.atleast_1d(theta), level=level
                )
        part = _batch(log_f, grad)
        result = part if result is None else _merge(result, part)
        remaining -= n
    return result


def level_statistics(
    model,
    theta: np.ndarray,
    level: int,
    inner: PointStream,
    M0: int,
    with_grad: bool,
) -> tuple[float, Optional[np.ndarray]]:
    """(Δψ_ℓ, Δψ̃_ℓ) at θ from ONE set of M_ℓ inner draws.

    Batch (a) is the first M_ℓ/2 draws of `inner`, batch (b) the rest; the
    full-level estimate merges both.  Corrections of independent groups
    (e.g. GLMM individuals) are summed.
    """
    if level < 0:
        raise ConfigurationError(f"level must be >= 0, got {level}")
    if inner.dimension != model.inner_dimension:
        raise ConfigurationError(
            f"inner stream has dimension {inner.dimension}, "
            f"model needs {model.inner_dimension}"
        )
    if with_grad and not model.supports_rp:
        raise CapabilityError(
            f"model '{model.name}' has no gradient chain; use the score-function method"
        )
    source = PointSource(inner)
    if level == 0:
        full = _evaluate(model, theta, source, M0, with_grad, level)
        dpsi = float(np.sum(full.log_mean))
        dpsi_tilde = None if full.ratio is None else full.ratio.sum(axis=0)
        return dpsi, dpsi_tilde

    half = M0 * 2 ** (level - 1)
    a = _evaluate(model, theta, source, half, with_grad, level)
    b = _evaluate(model, theta, source, half, with_grad, level)
    full = _merge(a, b)
    dpsi = float(np.sum(full.log_mean - 0.5 * (a.log_mean + b.log_mean)))
    dpsi_tilde = None
    if with_grad:
        dpsi_tilde = (full.ratio - 0.5 * (a.ratio + b.ratio)).sum(axis=0)
    return dpsi, dpsi_tilde


# =============================================================================
# Corrections
# =============================================================================
def sf_correction(model, theta, level: int, inner: PointStream, dist: LevelDistribution) -> float:
    """Δψ_{θ,ℓ}: antithetic difference of log sample means (ℓ=0: ψ_{θ,M0})."""
    dpsi, _ = level_statistics(model, np.asarray(theta, dtype=float), level, inner, dist.M0, False)
    return dpsi


def rp_correction(model, theta, level: int, inner: PointStream, dist: LevelDistribution) -> np.ndarray:
    """Δψ̃_{θ,ℓ}: antithetic difference of ratio estimators Σ∇θf / Σf."""
    _, dpsi_tilde = level_statistics(
        model, np.asarray(theta, dtype=float), level, inner, dist.M0, True
    )
    return dpsi_tilde


def coupled_corrections(
    model,
    theta,
    level: int,
    inner: PointStream,
    dist: LevelDistribution,
    with_rp: bool,
) -> tuple[Correction, Optional[Correction]]:
    """Both corrections at one level from the same inner draws."""
    dpsi, dpsi_tilde = level_statistics(
        model, np.asarray(theta, dtype=float), level, inner, dist.M0, with_rp
    )
    weight = dist.weight(level)
    cost = dist.inner_size(level)
    sf = Correction(level=level, weight=weight, value=dpsi, inner_cost=cost)
    rp = None
    if with_rp:
        rp = Correction(level=level, weight=weight, value=dpsi_tilde, inner_cost=cost)
    return sf, rp


def single_term(corr: Correction):
    """Δψ_I / w_I, an unbiased draw of log p(y*|θ) (or of its gradient)."""
    return corr.value / corr.weight


def _halves(values: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray]:
    if values.shape[0] % 2:
        raise ConfigurationError("level >= 1 needs an even number of inner draws")
    half = values.shape[0] // 2
    return values[:half], values[half:]


def sf_correction_from_log_values(log_f, level: int) -> float:
    """The SF coupling on precomputed log f values, rows in draw order.

    `log_f` is (M,) or (M, G); groups are summed.
    """
    log_f = np.asarray(log_f, dtype=float)
    if log_f.ndim == 1:
        log_f = log_f[:, None]
    if not np.all(np.isfinite(log_f)):
        raise EstimatorDomainError("log f is undefined for a drawn sample", level=level)
    full = _batch(log_f, None)
    if level == 0:
        return float(np.sum(full.log_mean))
    first, second = _halves(log_f, level)
    a, b = _batch(first, None), _batch(second, None)
    return float(np.sum(full.log_mean - 0.5 * (a.log_mean + b.log_mean)))


def rp_correction_from_values(f, grad_f, level: int) -> np.ndarray:
    """The ratio coupling on precomputed values f (M,) and ∇θf (M, p)."""
    f = np.asarray(f, dtype=float)
    grad_f = np.asarray(grad_f, dtype=float)
    if grad_f.ndim == 1:
        grad_f = grad_f[:, None]
    if np.any(f <= 0.0):
        raise EstimatorDomainError("ratio denominator needs f > 0", level=level)

    def ratio(fv, gv):
        return gv.sum(axis=0) / fv.sum()

    full = ratio(f, grad_f)
    if level == 0:
        return full
    fa, fb = _halves(f, level)
    ga, gb = _halves(grad_f, level)
    return full - 0.5 * (ratio(fa, ga) + ratio(fb, gb))


# =============================================================================
# Decay rates
# =============================================================================
def fit_decay_rate(second_moments: Sequence[float], kind: str = "elbo") -> DecayFit:
    """r = -slope of log2 E[|Δ|²] over levels 1..L (level 0 excluded)."""
    moments = np.asarray(second_moments, dtype=float)
    if moments.shape[0] < 4:
        raise ConfigurationError("decay-rate fits need levels 0..L with L >= 3")
    levels = np.arange(moments.shape[0])
    with np.errstate(divide="ignore"):
        log2_m = np.log2(moments)
    fit_levels, fit_values = levels[1:], log2_m[1:]
    if not np.all(np.isfinite(fit_values)):
        logger.warning("decay-rate fit: zero second moment at some level, reporting r=inf")
        return DecayFit(r=float("inf"), kind=kind, levels=levels, log2_moments=log2_m)
    slope = float(np.polyfit(fit_levels, fit_values, 1)[0])
    return DecayFit(r=-slope, kind=kind, levels=levels, log2_moments=log2_m)


def decay_rate(
    model,
    theta_source: Union[SFParams, RPParams, np.ndarray, Sequence[float]],
    dist: LevelDistribution,
    max_level: int,
    replicates: int,
    kind: str = "elbo",
    inner_kind: PointKind = PointKind.PSEUDORANDOM,
    seed: int = 0,
    outer_kind: PointKind = PointKind.PSEUDORANDOM,
) -> DecayFit:
    """Empirical decay rate r of the level corrections.

    Args:
        theta_source: variational parameters (θ is redrawn from q for every
            replicate) or a fixed θ.
        kind: "elbo" → E[Δψ²]; "sf" → E[Δψ²·|∇λ log q|²];
            "rp" → E[|∇λΓ·Δψ̃|²] (|Δψ̃|² at a fixed θ).
        inner_kind: pseudorandom or scrambled-net inner draws.
        outer_kind: with SCRAMBLED_NET the replicate θ draws of one level
            come from a single scrambled net of dimension p.

    Logs a warning when the fitted r does not exceed dist.alpha, i.e. the
    single-term estimator is in its infinite-variance regime.
    """
    if kind not in ("elbo", "sf", "rp"):
        raise ConfigurationError(f"unknown decay kind '{kind}'")
    if max_level < 3:
        raise ConfigurationError("decay_rate needs levels 0..L with L >= 3")
    if replicates < 100:
        raise ConfigurationError(f"decay_rate needs >= 100 replicates, got {replicates}")

    fixed_theta = None
    sf_params = rp_params = None
    if isinstance(theta_source, (SFParams, RPParams)):
        if kind == "sf":
            sf_params = gaussian_family.to_sf(theta_source)
        else:
            rp_params = gaussian_family.to_rp(theta_source)
    else:
        if kind == "sf":
            raise ConfigurationError("the 'sf' decay kind needs variational parameters, not a fixed θ")
        fixed_theta = np.atleast_1d(np.asarray(theta_source, dtype=float))

    root = root_stream(seed)
    with_rp = kind == "rp"
    moments = np.zeros(max_level + 1)
    for level in range(max_level + 1):
        level_stream = child(root, level)
        outer_z = None
        if outer_kind is PointKind.SCRAMBLED_NET:
            outer_z = normals(child(level_stream, replicates, kind=outer_kind, dimension=model.p), replicates)
        acc = 0.0
        for r in range(replicates):
            rep = child(level_stream, r)
            if outer_z is None:
                z = stream_rng(child(rep, 0)).standard_normal(model.p)
            else:
                z = outer_z[r]
            if fixed_theta is not None:
                theta = fixed_theta
            elif sf_params is not None:
                theta = gaussian_family.sample(sf_params, z)
            else:
                theta = gaussian_family.transform(rp_params, z)
            inner = child(rep, 1, kind=inner_kind, dimension=model.inner_dimension)
            dpsi, dpsi_tilde = level_statistics(model, theta, level, inner, dist.M0, with_rp)
            if kind == "elbo":
                acc += dpsi ** 2
            elif kind == "sf":
                acc += dpsi ** 2 * float(np.sum(gaussian_family.score(sf_params, theta) ** 2))
            elif fixed_theta is not None:
                acc += float(np.sum(dpsi_tilde ** 2))
            else:
                acc += float(np.sum(gaussian_family.rp_assemble(dpsi_tilde, z) ** 2))
        moments[level] = acc / replicates

    fit = fit_decay_rate(moments, kind=kind)
    if fit.r <= dist.alpha:
        logger.warning(
            "fitted decay rate r=%.3f does not exceed alpha=%.3f: "
            "single-term variance may be infinite",
            fit.r,
            dist.alpha,
        )
    return fit
