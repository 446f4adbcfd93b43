# Shared fixtures: the three models at test-friendly sizes plus two stub
# models whose integrands are trivially known.

from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from core.config import GLMM_THETA_TRUE
from core.problems import GkModel, GlmmModel, ModelSpec, ToyModel
from core.sixcity import synth_sixcity

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class ConstantModel(ModelSpec):
    """log f ≡ 0 and a N(mean, sd²) prior on a p-vector."""

    name = "constant"
    supports_rp = True

    def __init__(self, p: int = 1, inner_dimension: int = 2, mean: float = 0.0, sd: float = 1.0):
        self.p = p
        self.inner_dimension = inner_dimension
        self.mean = mean
        self.sd = sd

    def prior_logpdf(self, theta):
        out = np.sum(norm.logpdf(np.asarray(theta, dtype=float), self.mean, self.sd), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def prior_grad(self, theta):
        return -(np.asarray(theta, dtype=float) - self.mean) / self.sd ** 2

    def prior_sample(self, rng, n):
        return self.mean + self.sd * rng.standard_normal((n, self.p))

    def latent(self, theta, V):
        return V

    def log_integrand(self, theta, V):
        return np.zeros((V.shape[0], 1))

    def grad_log_integrand(self, theta, V):
        return np.zeros((V.shape[0], 1, self.p))


class FlakyModel(ConstantModel):
    """log f is -inf whenever the first uniform of a row is below 0.2."""

    name = "flaky"

    def log_integrand(self, theta, V):
        return np.where(V[:, :1] < 0.2, -np.inf, 0.0)


@pytest.fixture
def toy():
    return ToyModel(n=4, h=0.1)


@pytest.fixture
def gk_small():
    return GkModel(T=200, h=5.0)


@pytest.fixture(scope="session")
def glmm_data():
    return synth_sixcity(GLMM_THETA_TRUE, seed=11, n_individuals=30)


@pytest.fixture
def glmm_small(glmm_data):
    return GlmmModel(glmm_data)


@pytest.fixture
def constant_model():
    return ConstantModel()


@pytest.fixture
def flaky_model():
    return FlakyModel()


@pytest.fixture
def configs_dir():
    return CONFIGS
