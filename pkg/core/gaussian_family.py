# =============================================================================
# core/gaussian_family.py  —  Gaussian Variational Family
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Everything the optimiser needs to know about q_λ = N(μ, Σ) in its two
#   parameterizations:
#
#     SF form  λ = (μ, vech C),  C Cᵀ = Σ⁻¹   → score ∇λ log q_λ(θ)
#     RP form  λ = (μ, vech L),  L Lᵀ = Σ     → θ = Γ(u; λ) = μ + L u
#
#   plus the per-coordinate control variates used by the SF gradient.
#
# CONVENTIONS:
#   - log q always includes the -(p/2) log 2π constant.
#   - Flat λ vectors are (μ, vech(factor)) with column-major vech.
#   - Batched inputs: θ may be a p-vector or an (n, p) array; outputs follow.
# =============================================================================

from __future__ import annotations

import logging

import numpy as np

from core.errors import ConfigurationError
from core.models import ControlVariate, RPParams, SFParams, VariationalParams
from core.numerics import (
    LOG_2PI,
    chol_solve,
    cholesky,
    diagonal_positions,
    solve_lower,
    solve_lower_transpose,
    tril_indices,
    unvech,
    vech,
    vech_size,
)

logger = logging.getLogger(__name__)

DIAGONAL_FLOOR = 1e-8


# =============================================================================
# Construction & conversion
# =============================================================================
def factor(params: VariationalParams) -> np.ndarray:
    """Dense lower-triangular factor (C for SF, L for RP)."""
    packed = params.vechC if isinstance(params, SFParams) else params.vechL
    return unvech(packed, params.p)


def covariance(params: VariationalParams) -> np.ndarray:
    F = factor(params)
    if isinstance(params, RPParams):
        return F @ F.T
    return np.linalg.inv(F @ F.T)


def marginal_sd(params: VariationalParams) -> np.ndarray:
    return np.sqrt(np.diag(covariance(params)))


def from_moments(kind: str, mean, cov) -> VariationalParams:
    """Build SF ("sf") or RP ("rp") parameters for N(mean, cov)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.shape[0], mean.shape[0]):
        raise ConfigurationError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
    if kind == "rp":
        return RPParams(mu=mean, vechL=cholesky(cov).entries)
    if kind == "sf":
        return SFParams(mu=mean, vechC=cholesky(np.linalg.inv(cov)).entries)
    raise ConfigurationError(f"unknown parameterization '{kind}'")


def to_sf(params: VariationalParams) -> SFParams:
    if isinstance(params, SFParams):
        return params
    precision = np.linalg.inv(covariance(params))
    return SFParams(mu=params.mu.copy(), vechC=cholesky(0.5 * (precision + precision.T)).entries)


def to_rp(params: VariationalParams) -> RPParams:
    if isinstance(params, RPParams):
        return params
    cov = covariance(params)
    return RPParams(mu=params.mu.copy(), vechL=cholesky(0.5 * (cov + cov.T)).entries)


def kind_of(params: VariationalParams) -> str:
    return "sf" if isinstance(params, SFParams) else "rp"


def flat(params: VariationalParams) -> np.ndarray:
    packed = params.vechC if isinstance(params, SFParams) else params.vechL
    return np.concatenate([params.mu, packed])


def from_flat(kind: str, lam: np.ndarray, p: int) -> VariationalParams:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (p + vech_size(p),):
        raise ConfigurationError(f"flat λ of shape {lam.shape} does not fit p={p}")
    mu, packed = lam[:p].copy(), lam[p:].copy()
    return SFParams(mu=mu, vechC=packed) if kind == "sf" else RPParams(mu=mu, vechL=packed)


def clamp_diagonal(params: VariationalParams, floor: float = DIAGONAL_FLOOR) -> VariationalParams:
    """Raise Cholesky diagonal entries below `floor` to `floor`."""
    lam = flat(params)
    diag = params.p + diagonal_positions(params.p)
    lam[diag] = np.maximum(lam[diag], floor)
    return from_flat(kind_of(params), lam, params.p)


def params_to_dict(params: VariationalParams) -> dict:
    packed = params.vechC if isinstance(params, SFParams) else params.vechL
    return {"kind": kind_of(params), "mu": params.mu.tolist(), "factor": packed.tolist()}


def params_from_dict(data: dict) -> VariationalParams:
    try:
        mu = np.asarray(data["mu"], dtype=float)
        return from_flat(data["kind"], np.concatenate([mu, np.asarray(data["factor"], dtype=float)]), mu.shape[0])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed variational parameters: {exc}") from exc


# =============================================================================
# Density & sampling
# =============================================================================
def logq(params: VariationalParams, theta):
    """log q_λ(θ) including the normalising constant."""
    theta = np.asarray(theta, dtype=float)
    F = factor(params)
    resid = np.atleast_2d(theta - params.mu)
    log_det_f = float(np.sum(np.log(np.diag(F))))
    if isinstance(params, SFParams):
        z = resid @ F                      # rows are (Cᵀ r)ᵀ
        out = -0.5 * params.p * LOG_2PI + log_det_f - 0.5 * np.sum(z * z, axis=1)
    else:
        z = solve_lower(F, resid.T).T
        out = -0.5 * params.p * LOG_2PI - log_det_f - 0.5 * np.sum(z * z, axis=1)
    return float(out[0]) if theta.ndim == 1 else out


def transform(params: RPParams, u):
    """Γ(u; λ) = μ + L u."""
    u = np.asarray(u, dtype=float)
    return params.mu + u @ factor(params).T


def sample(params: VariationalParams, normals):
    """θ ~ q_λ from standard normals z (p-vector or (n, p)).

    SF form: θ = μ + x with Cᵀ x = z, so Cov(θ) = (C Cᵀ)⁻¹.
    """
    z = np.asarray(normals, dtype=float)
    if isinstance(params, RPParams):
        return transform(params, z)
    x = solve_lower_transpose(factor(params), np.atleast_2d(z).T).T
    return params.mu + (x[0] if z.ndim == 1 else x)


# =============================================================================
# Gradients
# =============================================================================
def score(params: SFParams, theta):
    """∇λ log q_λ(θ) for λ = (μ, vech C).

        ∇μ      = C Cᵀ (θ - μ)
        ∇vech C = vech(diag(1/C) - (θ - μ)(θ - μ)ᵀ C)
    """
    theta = np.asarray(theta, dtype=float)
    C = factor(params)
    resid = np.atleast_2d(theta - params.mu)
    rc = resid @ C                                     # (n, p) = (Cᵀ r)ᵀ
    grad_mu = rc @ C.T
    outer = resid[:, :, None] * rc[:, None, :]         # (θ-μ)(θ-μ)ᵀ C
    grad_c = -vech(outer)
    grad_c[:, diagonal_positions(params.p)] += 1.0 / np.diag(C)
    out = np.concatenate([grad_mu, grad_c], axis=1)
    return out[0] if theta.ndim == 1 else out


def score_mean_zero_check(params: SFParams, n_samples: int, rng: np.random.Generator):
    """Monte Carlo mean of the score under q and its standard error.

    Returns:
        (mean, standard_error), each a d_λ-vector.  E_q[score] = 0, so every
        coordinate of mean should lie within a few standard errors of zero.
    """
    if n_samples < 10_000:
        raise ConfigurationError(f"score_mean_zero_check needs >= 10^4 samples, got {n_samples}")
    theta = sample(params, rng.standard_normal((n_samples, params.p)))
    scores = score(params, theta)
    return scores.mean(axis=0), scores.std(axis=0, ddof=1) / np.sqrt(n_samples)


def rp_assemble(G, u):
    """(G, vech(G uᵀ)): chain rule through Γ(u; λ) = μ + L u."""
    G = np.asarray(G, dtype=float)
    u = np.asarray(u, dtype=float)
    if G.shape != u.shape:
        raise ConfigurationError(f"rp_assemble shape mismatch: G {G.shape}, u {u.shape}")
    outer = G[..., :, None] * u[..., None, :]
    return np.concatenate([G, vech(outer)], axis=-1)


def grad_logq_theta(params: RPParams, theta):
    """∇θ log q_λ(θ) = -(L Lᵀ)⁻¹ (θ - μ), by two triangular solves."""
    theta = np.asarray(theta, dtype=float)
    resid = np.atleast_2d(theta - params.mu)
    out = -chol_solve(factor(params), resid.T).T
    return out[0] if theta.ndim == 1 else out


# =============================================================================
# Control variates
# =============================================================================
def fit_control_variate(scores, xi) -> ControlVariate:
    """c_i = E[s_i² ξ] / E[s_i²] from paired samples (coordinate-wise).

    Coordinates whose score is identically zero get c_i = 0.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    xi = np.asarray(xi, dtype=float)
    if scores.shape[0] < 2 or xi.shape != (scores.shape[0],):
        raise ConfigurationError(
            f"control variates need n >= 2 paired samples, got scores {scores.shape}, xi {xi.shape}"
        )
    sq = scores * scores
    den = sq.mean(axis=0)
    num = (sq * xi[:, None]).mean(axis=0)
    degenerate = den <= 0.0
    c = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den))
    if np.any(degenerate):
        logger.info("control variate: %d degenerate coordinate(s) set to 0", int(degenerate.sum()))
    return ControlVariate(c=c, sample_count=scores.shape[0])


def apply_control_variate(scores, xi, cv: ControlVariate) -> np.ndarray:
    """Per-draw corrected SF gradients s_i ⊙ (ξ - c)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    xi = np.asarray(xi, dtype=float)
    return scores * (xi[:, None] - cv.c[None, :])


def coordinate_names(kind: str, p: int) -> list[str]:
    """Labels for the flat λ coordinates: mu_i, then C_ij (SF) or L_ij (RP), 1-based."""
    letter = "C" if kind == "sf" else "L"
    rows, cols = tril_indices(p)
    return [f"mu_{i + 1}" for i in range(p)] + [f"{letter}_{r + 1}{c + 1}" for r, c in zip(rows, cols)]


def entropy(params: VariationalParams) -> float:
    """Differential entropy ½ log det(2πe Σ) of q_λ."""
    log_det_f = float(np.sum(np.log(np.diag(factor(params)))))
    log_det_sigma = 2.0 * log_det_f if isinstance(params, RPParams) else -2.0 * log_det_f
    return 0.5 * params.p * (1.0 + LOG_2PI) + 0.5 * log_det_sigma
