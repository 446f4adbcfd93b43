import numpy as np
import pytest
from scipy.stats import kstest, multivariate_normal, norm

from core import gaussian_family as gf
from core.baselines import (
    abc_ar,
    synthetic_loglik,
    vbil_gradient,
    vbil_objective_draw,
    vbsl_loglik,
    vbsl_terms,
)
from core.config import RunConfig
from core.engine import gradient_draws
from core.errors import AbcRejectionError, CapabilityError, ConfigurationError
from core.models import Method, SyntheticLikConfig, VbilConfig
from core.problems import ToyModel
from core.qmc import root_stream

MU = np.array([0.5, -1.0])
SIGMA = np.array([[1.0, 0.3], [0.3, 0.5]])
S_OBS = np.array([0.2, -0.5])


@pytest.fixture
def wide_toy():
    return ToyModel(n=4, h=0.5)


# -----------------------------------------------------------------------------
# Synthetic likelihood
# -----------------------------------------------------------------------------
@pytest.mark.parametrize("N", [16, 64])
def test_synthetic_loglik_is_unbiased(N):
    rng = np.random.default_rng(N)
    exact = multivariate_normal(MU, SIGMA).logpdf(S_OBS)
    draws = np.array([
        synthetic_loglik(S_OBS, rng.multivariate_normal(MU, SIGMA, size=N)) for _ in range(10_000)
    ])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - exact) <= 4.0 * se


def test_synthetic_loglik_needs_enough_simulations():
    with pytest.raises(ConfigurationError):
        synthetic_loglik(S_OBS, np.zeros((4, 2)))
    with pytest.raises(ConfigurationError):
        SyntheticLikConfig(N=5, d=3)


def test_vbsl_loglik_checks_observed_length(wide_toy):
    config = SyntheticLikConfig(N=20, d=4)
    with pytest.raises(ConfigurationError):
        vbsl_loglik([0.0, 1.0], [0.0], wide_toy, config, root_stream(0))
    value = vbsl_loglik(wide_toy.observed_summaries, [0.0], wide_toy, config, root_stream(0))
    assert np.isfinite(value)
    assert value == vbsl_loglik(wide_toy.observed_summaries, [0.0], wide_toy, config, root_stream(0))


def test_vbsl_terms_shapes(wide_toy):
    params = gf.from_moments("sf", [0.0], [[0.5]])
    theta, xi = vbsl_terms(params, wide_toy, SyntheticLikConfig(N=20, d=4), root_stream(1), 6)
    assert theta.shape == (6, 1) and xi.shape == (6,)
    assert np.all(np.isfinite(xi))


# -----------------------------------------------------------------------------
# VBIL
# -----------------------------------------------------------------------------
def test_vbil_is_replayable(toy):
    params = gf.from_moments("sf", [0.1], [[0.4]])
    a = vbil_gradient(params, toy, VbilConfig(N=8), root_stream(3), S=20)
    b = vbil_gradient(params, toy, VbilConfig(N=8), root_stream(3), S=20)
    assert a.shape == (2,)
    assert np.array_equal(a, b)
    objective = vbil_objective_draw(params, toy, VbilConfig(N=8), root_stream(3), S=20)
    assert objective.samples == 20 and np.isfinite(objective.value)


def test_vbil_config_validation():
    with pytest.raises(ConfigurationError):
        VbilConfig(N=0)


# -----------------------------------------------------------------------------
# ABC acceptance-rejection
# -----------------------------------------------------------------------------
def test_abc_ar_bookkeeping(wide_toy):
    sample = abc_ar(wide_toy, 50, root_stream(1), batch=500)
    assert sample.thetas.shape == (50, 1)
    assert sample.accepted == 50
    assert sample.proposed >= 50
    assert sample.acceptance_rate == pytest.approx(50 / sample.proposed)
    again = abc_ar(wide_toy, 50, root_stream(1), batch=500)
    assert np.array_equal(sample.thetas, again.thetas)


def test_abc_ar_gives_up_on_tiny_acceptance_rates(toy):
    with pytest.raises(AbcRejectionError) as info:
        abc_ar(toy, 10 ** 6, root_stream(2), batch=1000, probe_window=1000, min_rate=0.5)
    assert info.value.proposed == 1000
    assert info.value.accepted < 500


def test_abc_ar_needs_a_kernel(glmm_small):
    with pytest.raises(CapabilityError):
        abc_ar(glmm_small, 10, root_stream(0))
    with pytest.raises(ConfigurationError):
        abc_ar(ToyModel(), 0, root_stream(0))


@pytest.mark.slow
def test_abc_ar_matches_the_abc_posterior(wide_toy):
    mean, var = wide_toy.abc_posterior()
    sample = abc_ar(wide_toy, 10_000, root_stream(4))
    result = kstest(sample.thetas[:, 0], norm(mean, np.sqrt(var)).cdf)
    assert result.pvalue > 0.01


@pytest.mark.slow
def test_abc_ar_matches_the_abc_posterior_at_the_narrow_kernel(toy):
    mean, var = toy.abc_posterior()
    sample = abc_ar(toy, 10_000, root_stream(6))
    assert sample.acceptance_rate < 0.05
    result = kstest(sample.thetas[:, 0], norm(mean, np.sqrt(var)).cdf)
    assert result.pvalue > 0.01


# -----------------------------------------------------------------------------
# VBIL against the toy oracle
# -----------------------------------------------------------------------------
@pytest.mark.slow
def test_plug_in_bias_shrinks_with_n(toy):
    # At the ABC posterior the ELBO equals log p̃(y*); what remains is the Jensen gap.
    mean, var = toy.abc_posterior()
    params = gf.from_moments("sf", [mean], [[var]])
    estimates = [
        vbil_objective_draw(params, toy, VbilConfig(N=N), root_stream(5), S=4000)
        for N in (4, 16, 64, 256)
    ]
    gaps = np.array([toy.log_evidence() - est.value for est in estimates])
    ses = np.array([est.std_error for est in estimates])
    assert np.all(gaps > -3.0 * ses)
    assert np.all(np.diff(gaps) <= 2.0 * ses.max())
    assert gaps[0] - gaps[-1] > 3.0 * (ses[0] + ses[-1])


@pytest.mark.slow
def test_vbil_gradient_at_large_n_matches_the_elbo_gradient(toy):
    N, S = 2 ** 14, 2000
    params = gf.from_moments("sf", [0.2], [[0.15]])
    config = RunConfig(method=Method.VBIL, vbil_n=N, outer_samples=S)
    rows = gradient_draws(params, config, toy, root_stream(12))
    assert np.allclose(vbil_gradient(params, toy, VbilConfig(N=N), root_stream(12), S=S), rows.mean(axis=0))
    se = rows.std(axis=0, ddof=1) / np.sqrt(S)
    # 3 SE plus a band for the O(1/N) plug-in bias.
    assert np.all(np.abs(rows.mean(axis=0) - toy.analytic_elbo_grad(params)) <= 3.0 * se + 0.05)
