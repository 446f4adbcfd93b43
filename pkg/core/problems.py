# =============================================================================
# core/problems.py  —  Model Specifications (prior, latent map, integrand)
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Every inference problem the engine can fit is a ModelSpec: a bundle of
#   capabilities written against one vectorised contract.
#
#     prior_logpdf(θ) / prior_grad(θ) / prior_sample(rng, n)
#     latent(θ, V)             x = Λ(V; θ) for a (M, s) block of uniforms
#     log_integrand(θ, V)      log f(x; y*)            → (M, G)
#     grad_log_integrand(θ, V) ∇θ log f(Λ(V;θ); y*)    → (M, G, p)   [RP only]
#
#   G is the number of independent groups whose log-likelihoods add up
#   (1 for the ABC models, one per child for the GLMM).  An inner draw of
#   dimension s = G × (uniforms per group) feeds all groups at once; each
#   group reads its own block of coordinates.
#
# THE THREE PROBLEMS:
#   ToyModel   Gaussian location model with a Gaussian ABC kernel; closed-form
#              ABC likelihood, posterior, evidence and ELBO as oracles.
#   GkModel    g-and-k quantile model with octile summaries (SF only: the
#              octiles are not differentiable).
#   GlmmModel  random-intercept logistic regression (six-city wheeze data);
#              the likelihood is a product of 1-D integrals over α_i.
#
# REGISTRY:
#   build_model(model_config) maps the config's `name` to a constructor.
# =============================================================================

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, gammaln, logsumexp, ndtri
from scipy.stats import norm

from core.errors import CapabilityError, ConfigurationError, DegenerateSampleError, DomainError
from core.gaussian_family import factor
from core.models import RPParams, SFParams, SixCityData, VariationalParams
from core.numerics import LOG_2PI, cholesky, mvn_logpdf
from core.qmc import open_unit

logger = logging.getLogger(__name__)


# =============================================================================
# ABC kernel
# =============================================================================
def _identity(y: np.ndarray) -> np.ndarray:
    return np.asarray(y, dtype=float)


def _identity_jacobian(y: np.ndarray) -> np.ndarray:
    return np.eye(np.shape(y)[-1])


@dataclass(frozen=True)
class AbcKernelConfig:
    """Gaussian kernel K_h on d summary statistics 𝒮(y).

    summary_jacobian(y) returns ∇y𝒮(y) with shape (len(y), d); it is None
    when 𝒮 is not differentiable.
    """

    h: float
    d: int
    summary: Callable[[np.ndarray], np.ndarray] = _identity
    summary_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = _identity_jacobian

    def __post_init__(self):
        if not self.h > 0.0:
            raise ConfigurationError(f"kernel bandwidth h must be positive, got {self.h}")
        if self.d < 1:
            raise ConfigurationError(f"summary dimension must be >= 1, got {self.d}")

    @property
    def k_max(self) -> float:
        """Kernel value at s = s*, the upper bound used by rejection ABC."""
        return float((2.0 * np.pi * self.h) ** (-0.5 * self.d))


def log_gaussian_kernel(s, s_star, h: float):
    """log K_h(s, s*) over the last axis."""
    if not h > 0.0:
        raise ConfigurationError(f"kernel bandwidth h must be positive, got {h}")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    diff = s - np.asarray(s_star, dtype=float)
    d = s.shape[-1]
    return -0.5 * d * np.log(2.0 * np.pi * h) - np.sum(diff * diff, axis=-1) / (2.0 * h)


def gaussian_kernel(s, s_star, h: float):
    """K_h(s, s*) = (2πh)^(-d/2) exp(-|s - s*|² / (2h))."""
    out = np.exp(log_gaussian_kernel(s, s_star, h))
    return float(out) if np.ndim(out) == 0 else out


def kernel_grad_y(y, y_star, config: AbcKernelConfig) -> np.ndarray:
    """∇y K_h(𝒮(y), 𝒮(y*)) = K_h · ∇y𝒮(y) [𝒮(y*) - 𝒮(y)] / h."""
    if config.summary_jacobian is None:
        raise CapabilityError(
            "summary statistics are not differentiable; use the score-function method"
        )
    y = np.asarray(y, dtype=float)
    s, s_star = config.summary(y), config.summary(np.asarray(y_star, dtype=float))
    k = gaussian_kernel(s, s_star, config.h)
    return k * config.summary_jacobian(y) @ (s_star - s) / config.h


# =============================================================================
# ModelSpec
# =============================================================================
class ModelSpec(ABC):
    """Capability bundle for p(y*|θ) = E[f(Λ(v;θ); y*) | θ]."""

    name: str = "model"
    p: int
    inner_dimension: int
    n_groups: int = 1
    supports_rp: bool = False
    kernel: Optional[AbcKernelConfig] = None

    @property
    def row_elements(self) -> int:
        """Array elements touched per inner row (sizes evaluation chunks)."""
        return self.inner_dimension

    @abstractmethod
    def prior_logpdf(self, theta): ...

    @abstractmethod
    def prior_grad(self, theta): ...

    @abstractmethod
    def prior_sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def latent(self, theta, V: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def log_integrand(self, theta, V: np.ndarray) -> np.ndarray: ...

    def grad_log_integrand(self, theta, V: np.ndarray) -> np.ndarray:
        raise CapabilityError(
            f"model '{self.name}' has no gradient chain; use the score-function method"
        )

    def integrand(self, theta, V: np.ndarray) -> np.ndarray:
        return np.exp(self.log_integrand(theta, V))

    def rp_chain(self, theta, V: np.ndarray) -> np.ndarray:
        """∇θΛ(v;θ)·∇x f(x;y*) = f · ∇θ log f, shape (M, G, p)."""
        return self.integrand(theta, V)[..., None] * self.grad_log_integrand(theta, V)

    @property
    def observed_summaries(self) -> np.ndarray:
        raise CapabilityError(f"model '{self.name}' has no summary statistics")

    def simulate_summaries(self, thetas, V: np.ndarray) -> np.ndarray:
        """Summaries 𝒮(y) for y ~ p(y|θ_m), one θ row per uniform row."""
        raise CapabilityError(f"model '{self.name}' cannot simulate summary statistics")

    def default_init(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean, covariance) of the starting q when the run config gives none."""
        return np.zeros(self.p), np.eye(self.p)

    def describe(self) -> dict:
        return {"name": self.name, "p": self.p, "inner_dimension": self.inner_dimension,
                "n_groups": self.n_groups, "supports_rp": self.supports_rp}


def _theta_column(theta, index: int = 0) -> np.ndarray:
    """θ_index as a scalar (single θ) or an (M, 1) column (batch of θ)."""
    theta = np.asarray(theta, dtype=float)
    return theta[index] if theta.ndim == 1 else theta[:, index:index + 1]


# =============================================================================
# Toy Gaussian ABC model
# =============================================================================
class ToyModel(ModelSpec):
    """y_i = θ + z_i (i = 1..n), prior θ ~ N(0, 1), Gaussian kernel on y itself."""

    name = "toy"

    def __init__(self, n: int = 4, h: float = 0.1, y_star: Optional[Sequence[float]] = None):
        if n < 1:
            raise ConfigurationError(f"toy model needs n >= 1, got {n}")
        self.n = int(n)
        self.h = float(h)
        self.y_star = np.zeros(self.n) if y_star is None else np.asarray(y_star, dtype=float)
        if self.y_star.shape != (self.n,):
            raise ConfigurationError(f"y_star must have length {self.n}")
        self.kernel = AbcKernelConfig(h=self.h, d=self.n)
        self.p = 1
        self.inner_dimension = self.n
        self.supports_rp = True

    # --- prior ---------------------------------------------------------------
    def prior_logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = -0.5 * LOG_2PI - 0.5 * np.sum(theta * theta, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def prior_grad(self, theta):
        return -np.asarray(theta, dtype=float)

    def prior_sample(self, rng, n):
        return rng.standard_normal((n, 1))

    # --- simulation ----------------------------------------------------------
    def latent(self, theta, V):
        return _theta_column(theta) + ndtri(open_unit(V))

    def log_integrand(self, theta, V):
        y = self.latent(theta, V)
        return log_gaussian_kernel(y, self.y_star, self.h)[:, None]

    def grad_log_integrand(self, theta, V):
        y = self.latent(theta, V)
        return (np.sum(self.y_star - y, axis=-1) / self.h)[:, None, None]

    @property
    def observed_summaries(self):
        return self.y_star.copy()

    def simulate_summaries(self, thetas, V):
        return self.latent(np.atleast_2d(thetas), V)

    def default_init(self):
        return np.array([self.y_star.mean()]), np.eye(1)

    # --- oracles -------------------------------------------------------------
    def abc_loglik(self, theta):
        """log p̃(y*|θ) = Σ log φ(y*_i; θ, 1 + h)."""
        theta = np.asarray(theta, dtype=float)
        scale = np.sqrt(1.0 + self.h)
        out = np.sum(norm.logpdf(self.y_star, loc=theta[..., None], scale=scale), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def abc_posterior(self) -> tuple[float, float]:
        """(mean, variance) of the ABC posterior."""
        denom = self.n + 1.0 + self.h
        return float(self.y_star.sum() / denom), (1.0 + self.h) / denom

    def exact_posterior(self) -> tuple[float, float]:
        """(mean, variance) of the posterior without kernel smoothing."""
        return float(self.y_star.sum() / (self.n + 1.0)), 1.0 / (self.n + 1.0)

    def log_evidence(self) -> float:
        """log p̃(y*) with y* ~ N(0, (1 + h) I + 11ᵀ)."""
        cov = (1.0 + self.h) * np.eye(self.n) + np.ones((self.n, self.n))
        return mvn_logpdf(self.y_star, np.zeros(self.n), cholesky(cov))

    def analytic_elbo(self, mean: float, var: float) -> float:
        """L(λ) for q = N(mean, var), exact."""
        c = 1.0 + self.h
        expected_loglik = (
            -0.5 * self.n * np.log(2.0 * np.pi * c)
            - (np.sum((self.y_star - mean) ** 2) + self.n * var) / (2.0 * c)
        )
        expected_prior = -0.5 * LOG_2PI - 0.5 * (mean ** 2 + var)
        entropy = 0.5 * np.log(2.0 * np.pi * np.e * var)
        return float(expected_loglik + expected_prior + entropy)

    def analytic_elbo_grad(self, params: VariationalParams) -> np.ndarray:
        """∇λ L(λ) in the flat coordinates of `params` (SF: (μ, C), RP: (μ, L))."""
        mean = float(params.mu[0])
        f = float(factor(params)[0, 0])
        var = 1.0 / f ** 2 if isinstance(params, SFParams) else f ** 2
        c = 1.0 + self.h
        d_mean = float(np.sum(self.y_star - mean) / c - mean)
        d_var = -self.n / (2.0 * c) - 0.5 + 1.0 / (2.0 * var)
        if isinstance(params, RPParams):
            return np.array([d_mean, 2.0 * f * d_var])
        return np.array([d_mean, -2.0 * f ** -3 * d_var])

    def elbo_maximizer(self) -> tuple[float, float]:
        """(mean, variance) maximising the analytic ELBO (the ABC posterior)."""
        return self.abc_posterior()


# =============================================================================
# g-and-k model
# =============================================================================
GK_THETA0 = (3.0, 1.0, 2.0, 0.5)
GK_C = 0.8
OCTILES = np.arange(1, 8) / 8.0


def gk_quantile(q, theta):
    """Q(q|A,B,g,k) = A + B[1 + 0.8 tanh(g z/2)](1 + z²)^k z with z = Φ⁻¹(q).

    θ is (A, B, g, k) or an (M, 4) batch broadcasting against q of shape
    (M, T).
    """
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    if theta.ndim == 1:
        A, B, g, k = theta
    else:
        A, B, g, k = (theta[:, i:i + 1] for i in range(4))
    if np.any(np.asarray(B) <= 0.0) or np.any(np.asarray(k) <= -0.5):
        raise DomainError("g-and-k needs B > 0 and k > -1/2", value=theta)
    if not np.all((q > 0.0) & (q < 1.0)):
        raise DomainError("g-and-k quantile needs 0 < q < 1", value=q)
    z = ndtri(q)
    out = A + B * (1.0 + GK_C * np.tanh(0.5 * g * z)) * (1.0 + z * z) ** k * z
    return float(out) if np.ndim(out) == 0 else out


def gk_from_unconstrained(theta_tilde):
    """(A, log B, g, log(k + ½)) → (A, B, g, k) along the last axis."""
    t = np.asarray(theta_tilde, dtype=float)
    return np.stack([t[..., 0], np.exp(t[..., 1]), t[..., 2], np.exp(t[..., 3]) - 0.5], axis=-1)


def gk_to_unconstrained(theta):
    t = np.asarray(theta, dtype=float)
    if np.any(t[..., 1] <= 0.0) or np.any(t[..., 3] <= -0.5):
        raise DomainError("g-and-k needs B > 0 and k > -1/2", value=theta)
    return np.stack([t[..., 0], np.log(t[..., 1]), t[..., 2], np.log(t[..., 3] + 0.5)], axis=-1)


def gk_summaries(y):
    """Octile summaries (E4, E6 - E2, (E6 + E2 - 2E4)/S_B, (E7 - E5 + E3 - E1)/S_B).

    Octiles use linear interpolation between order statistics
    (position (T - 1)·k/8).  `y` is a sample (T,) or a batch (M, T).
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] < 8:
        raise ConfigurationError(f"octile summaries need at least 8 values, got {y.shape[-1]}")
    E = np.quantile(y, OCTILES, axis=-1, method="linear")
    s_b = E[5] - E[1]
    if np.any(s_b == 0.0):
        raise DegenerateSampleError("octile spread E6 - E2 is zero")
    out = np.stack(
        [E[3], s_b, (E[5] + E[1] - 2.0 * E[3]) / s_b, (E[6] - E[4] + E[2] - E[0]) / s_b],
        axis=-1,
    )
    return out


class GkModel(ModelSpec):
    """g-and-k observations of length T, parameters on the unconstrained scale."""

    name = "gk"

    def __init__(
        self,
        T: int = 1000,
        h: float = 5.0,
        observed_summaries: Optional[Sequence[float]] = None,
        observation_seed: int = 2024,
        theta0: Sequence[float] = GK_THETA0,
        prior_var: float = 4.0,
    ):
        if T < 8:
            raise ConfigurationError(f"g-and-k needs T >= 8, got {T}")
        self.T = int(T)
        self.h = float(h)
        self.prior_var = float(prior_var)
        self.theta0 = np.asarray(theta0, dtype=float)
        self.kernel = AbcKernelConfig(h=self.h, d=4, summary=gk_summaries, summary_jacobian=None)
        self.p = 4
        self.inner_dimension = self.T
        self.supports_rp = False
        if observed_summaries is None:
            rng = np.random.default_rng(observation_seed)
            y_star = gk_quantile(open_unit(rng.random(self.T)), self.theta0)
            self._s_star = gk_summaries(y_star)
        else:
            self._s_star = np.asarray(observed_summaries, dtype=float)
            if self._s_star.shape != (4,):
                raise ConfigurationError("g-and-k observed summaries must have length 4")

    def prior_logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = -0.5 * self.p * np.log(2.0 * np.pi * self.prior_var) \
            - np.sum(theta * theta, axis=-1) / (2.0 * self.prior_var)
        return float(out) if np.ndim(out) == 0 else out

    def prior_grad(self, theta):
        return -np.asarray(theta, dtype=float) / self.prior_var

    def prior_sample(self, rng, n):
        return np.sqrt(self.prior_var) * rng.standard_normal((n, self.p))

    def latent(self, theta, V):
        return gk_quantile(open_unit(V), gk_from_unconstrained(theta))

    def log_integrand(self, theta, V):
        s = gk_summaries(self.latent(theta, V))
        return log_gaussian_kernel(s, self._s_star, self.h)[:, None]

    @property
    def observed_summaries(self):
        return self._s_star.copy()

    def simulate_summaries(self, thetas, V):
        return gk_summaries(self.latent(np.atleast_2d(thetas), V))


# =============================================================================
# Random-intercept logistic GLMM
# =============================================================================
class GlmmModel(ModelSpec):
    """logit p_ij = β1 + β2 A_ij + β3 S_i + α_i, α_i ~ N(0, τ²).

    θ = (β1, β2, β3, log τ²).  Each child is one group; its latent α_i comes
    from one uniform via α_i = τ Φ⁻¹(v_i), so the prior on α is the
    proposal and f_i = ∏_j Bernoulli(y_ij; p_ij).

    Priors: β ~ N(0, beta_prior_var·I) and τ ~ Gamma(shape, rate); the
    density of θ4 = log τ² includes the Jacobian dτ/dθ4 = τ/2.
    """

    name = "glmm"

    def __init__(
        self,
        data: SixCityData,
        beta_prior_var: float = 50.0,
        tau_shape: float = 1.0,
        tau_rate: float = 0.1,
    ):
        self.data = data
        self.beta_prior_var = float(beta_prior_var)
        self.tau_shape = float(tau_shape)
        self.tau_rate = float(tau_rate)
        self.p = 4
        self.n_groups = data.n_individuals
        self.inner_dimension = data.n_individuals
        self.supports_rp = True
        self._y = data.y.astype(float)

    @property
    def row_elements(self) -> int:
        return self.data.n_individuals * self.data.n_visits * self.p

    # --- prior ---------------------------------------------------------------
    def prior_logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        beta, theta4 = theta[..., :3], theta[..., 3]
        tau = np.exp(0.5 * theta4)
        log_beta = -1.5 * np.log(2.0 * np.pi * self.beta_prior_var) \
            - np.sum(beta * beta, axis=-1) / (2.0 * self.beta_prior_var)
        a, b = self.tau_shape, self.tau_rate
        log_tau = a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(tau) - b * tau
        out = log_beta + log_tau + np.log(0.5 * tau)
        return float(out) if np.ndim(out) == 0 else out

    def prior_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        tau = np.exp(0.5 * theta[..., 3])
        grad = np.empty_like(theta)
        grad[..., :3] = -theta[..., :3] / self.beta_prior_var
        grad[..., 3] = 0.5 * self.tau_shape - 0.5 * self.tau_rate * tau
        return grad

    def prior_sample(self, rng, n):
        beta = np.sqrt(self.beta_prior_var) * rng.standard_normal((n, 3))
        tau = rng.gamma(self.tau_shape, 1.0 / self.tau_rate, size=n)
        return np.column_stack([beta, 2.0 * np.log(tau)])

    # --- likelihood ----------------------------------------------------------
    def fixed_effects(self, theta) -> np.ndarray:
        """β1 + β2 A_ij + β3 S_i, shape (n, J)."""
        b1, b2, b3 = np.asarray(theta, dtype=float)[:3]
        return b1 + b2 * self.data.age + b3 * self.data.smoking[:, None]

    def latent(self, theta, V):
        """Random intercepts α = τ Φ⁻¹(V), shape (M, n)."""
        tau = np.exp(0.5 * float(np.asarray(theta)[3]))
        return tau * ndtri(open_unit(V))

    def _eta(self, theta, V):
        alpha = self.latent(theta, V)
        return alpha, self.fixed_effects(theta)[None, :, :] + alpha[:, :, None]

    def log_integrand(self, theta, V):
        _, eta = self._eta(theta, V)
        return np.sum(self._y * eta - np.logaddexp(0.0, eta), axis=-1)

    def grad_log_integrand(self, theta, V):
        alpha, eta = self._eta(theta, V)
        resid = self._y - expit(eta)                          # (M, n, J)
        grad = np.empty(resid.shape[:2] + (self.p,))
        grad[..., 0] = resid.sum(axis=-1)
        grad[..., 1] = np.sum(resid * self.data.age, axis=-1)
        grad[..., 2] = resid.sum(axis=-1) * self.data.smoking
        grad[..., 3] = resid.sum(axis=-1) * 0.5 * alpha
        return grad

    # --- oracle --------------------------------------------------------------
    def individual_loglik_quadrature(self, theta, i: int, degree: int = 80) -> float:
        """log ∫ f_i(τ z) φ(z) dz by Gauss–Hermite (probabilists') quadrature."""
        nodes, weights = hermegauss(degree)
        theta = np.asarray(theta, dtype=float)
        tau = np.exp(0.5 * theta[3])
        eta = self.fixed_effects(theta)[i][None, :] + tau * nodes[:, None]
        log_f = np.sum(self._y[i] * eta - np.logaddexp(0.0, eta), axis=-1)
        return float(logsumexp(log_f, b=weights) - 0.5 * LOG_2PI)


# =============================================================================
# Registry
# =============================================================================
def build_model(model_config) -> ModelSpec:
    """Construct the model named by `model_config.name`."""
    name = model_config.name
    if name == "toy":
        return ToyModel(n=model_config.n, h=model_config.h, y_star=model_config.y_star)
    if name == "gk":
        return GkModel(
            T=model_config.T,
            h=model_config.h,
            observed_summaries=model_config.observed_summaries,
            observation_seed=model_config.observation_seed,
        )
    if name == "glmm":
        # Imported here so the toy and g-and-k paths never touch file I/O.
        from core.sixcity import load_sixcity, synth_sixcity

        if model_config.data_path:
            data = load_sixcity(model_config.data_path)
        else:
            data = synth_sixcity(
                model_config.theta_true,
                seed=model_config.synthetic_seed,
                n_individuals=model_config.n_individuals,
            )
        return GlmmModel(data)
    raise ConfigurationError(f"unknown model '{name}' (expected toy, gk or glmm)")
