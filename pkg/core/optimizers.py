# =============================================================================
# core/optimizers.py  —  Step-Size Schedules on the Flat λ Vector
# =============================================================================
#
# Both optimisers do gradient ASCENT on the ELBO:  λ ← λ + step(t, g).
#
#   RobbinsMonro  ρ_t = a / (t + b)       (Σρ = ∞, Σρ² < ∞ for a, b > 0)
#   Adam          bias-corrected first/second moment scaling
#
# Optimisers are stateful (Adam keeps its moment estimates); the engine
# builds a fresh one per run with build_optimizer().
# =============================================================================

from __future__ import annotations

import numpy as np

from core.errors import ConfigurationError


class RobbinsMonro:
    def __init__(self, a: float = 1.0, b: float = 5.0):
        if not (a > 0.0 and b > 0.0):
            raise ConfigurationError(f"Robbins–Monro needs a, b > 0 (a={a}, b={b})")
        self.a = float(a)
        self.b = float(b)

    def rate(self, t: int) -> float:
        return self.a / (t + self.b)

    def step(self, t: int, grad: np.ndarray) -> np.ndarray:
        return self.rate(t) * np.asarray(grad, dtype=float)


class Adam:
    def __init__(self, step: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if step <= 0.0:
            raise ConfigurationError(f"Adam step must be positive, got {step}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in [0, 1) (beta1={beta1}, beta2={beta2})")
        if eps <= 0.0:
            raise ConfigurationError(f"Adam eps must be positive, got {eps}")
        self.step_size = float(step)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m = None
        self._v = None
        self._count = 0

    def step(self, t: int, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        if self._m is None:
            self._m = np.zeros_like(grad)
            self._v = np.zeros_like(grad)
        self._count += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        m_hat = self._m / (1.0 - self.beta1 ** self._count)
        v_hat = self._v / (1.0 - self.beta2 ** self._count)
        return self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(optimizer_config):
    """RobbinsMonro or Adam from an OptimizerConfig."""
    if optimizer_config.kind == "robbins_monro":
        return RobbinsMonro(optimizer_config.a, optimizer_config.b)
    if optimizer_config.kind == "adam":
        return Adam(
            optimizer_config.step,
            optimizer_config.beta1,
            optimizer_config.beta2,
            optimizer_config.eps,
        )
    raise ConfigurationError(f"unknown optimizer '{optimizer_config.kind}'")
