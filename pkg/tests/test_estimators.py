import numpy as np
import pytest

from core import gaussian_family as gf
from core.errors import ConfigurationError, EstimatorDomainError
from core.estimators import (
    DrawBatch,
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
from core.models import Placement, PointKind
from core.qmc import root_stream

DIST = LevelDistribution(alpha=1.3, M0=1)


def _plan(model, placement=Placement.NONE, seed=0):
    return rqmc_placement(placement, root_stream(seed), model.p, model.inner_dimension)


@pytest.mark.parametrize("placement", list(Placement))
def test_placement_wiring(placement):
    plan = rqmc_placement(placement, root_stream(3), 2, 5)
    assert (plan.outer.kind is PointKind.SCRAMBLED_NET) == placement.outer_rqmc
    assert (plan.inner_root.kind is PointKind.SCRAMBLED_NET) == placement.inner_rqmc
    assert plan.levels.kind is PointKind.PSEUDORANDOM
    assert (plan.outer.dimension, plan.levels.dimension, plan.inner_root.dimension) == (2, 1, 5)
    assert plan.inner(4).key == plan.inner_root.key + (4,)


def test_placements_share_pseudorandom_draws(toy):
    params = gf.from_moments("sf", [0.0], [[0.5]])
    none = draw_batch(params, toy, DIST, 16, _plan(toy, Placement.NONE), False)
    inner = draw_batch(params, toy, DIST, 16, _plan(toy, Placement.INNER), False)
    assert np.array_equal(none.theta, inner.theta)
    assert np.array_equal(none.levels, inner.levels)


def test_plug_in_distribution_is_degenerate():
    dist = plug_in_distribution(16)
    assert dist.weights().tolist() == [1.0]
    assert dist.inner_size(0) == 16


def test_batch_cost_is_sum_of_inner_sizes(toy):
    params = gf.from_moments("rp", [0.0], [[0.5]])
    batch = draw_batch(params, toy, DIST, 50, _plan(toy), True)
    assert batch.cost == sum(DIST.inner_size(int(level)) for level in batch.levels)
    assert batch.dpsi.shape == (50,) and batch.dpsi_tilde.shape == (50, 1)
    assert batch.mean_level == pytest.approx(np.mean(batch.levels))
    assert np.allclose(batch.loglik_terms, batch.dpsi / batch.weights)


def test_draws_do_not_depend_on_thread_count(toy):
    params = gf.from_moments("rp", [0.1], [[0.3]])
    one = draw_batch(params, toy, DIST, 40, _plan(toy, Placement.BOTH), True, threads=1)
    four = draw_batch(params, toy, DIST, 40, _plan(toy, Placement.BOTH), True, threads=4)
    assert np.array_equal(one.dpsi, four.dpsi)
    assert np.array_equal(one.dpsi_tilde, four.dpsi_tilde)
    assert one.cost == four.cost


def test_draw_batch_validation(toy):
    params = gf.from_moments("sf", [0.0], [[1.0]])
    with pytest.raises(ConfigurationError):
        draw_batch(params, toy, DIST, 0, _plan(toy), False)
    with pytest.raises(ConfigurationError):
        draw_batch(params, toy, DIST, 4, _plan(toy), False, threads=0)


def test_bad_draws_abort_or_resample(flaky_model):
    params = gf.from_moments("sf", [0.0], [[1.0]])
    dist = plug_in_distribution(1)
    with pytest.raises(EstimatorDomainError) as info:
        draw_batch(params, flaky_model, dist, 50, _plan(flaky_model), False)
    assert info.value.level == 0
    batch = draw_batch(params, flaky_model, dist, 50, _plan(flaky_model), False, skip_bad_draws=True)
    assert batch.resampled > 0
    assert np.all(batch.dpsi == 0.0)


def test_rp_rows_at_zero_noise(toy):
    params = gf.from_moments("rp", [0.2], [[0.5]])
    batch = DrawBatch(
        z=np.zeros((3, 1)), theta=np.full((3, 1), 0.2), levels=np.zeros(3, dtype=int),
        weights=np.ones(3), dpsi=np.zeros(3), dpsi_tilde=np.array([[1.0], [2.0], [3.0]]),
        cost=3, resampled=0,
    )
    rows = rp_gradient_rows(params, toy, batch)
    assert np.allclose(rows[:, 0], [1.0 - 0.2, 2.0 - 0.2, 3.0 - 0.2])
    assert np.all(rows[:, 1] == 0.0)
    with pytest.raises(ConfigurationError):
        rp_gradient_rows(params, toy, DrawBatch(**{**batch.__dict__, "dpsi_tilde": None}))


def test_elbo_summaries(toy):
    with pytest.raises(ConfigurationError):
        summarize_elbo(np.array([1.0]))
    est = summarize_elbo(np.array([1.0, 3.0]))
    assert (est.value, est.samples) == (2.0, 2)
    assert est.std_error == pytest.approx(1.0)
    params = gf.from_moments("sf", [0.0], [[1.0]])
    assert estimate_elbo(params, toy, DIST, 2, Placement.NONE, root_stream(0)).samples == 2
    with pytest.raises(ConfigurationError):
        estimate_elbo(params, toy, DIST, 1, Placement.NONE, root_stream(0))


@pytest.mark.slow
def test_sf_gradient_is_unbiased(toy):
    # q = N(ȳ*, 1)
    params = gf.from_moments("sf", [toy.y_star.mean()], [[1.0]])
    batch = draw_batch(params, toy, DIST, 100_000, _plan(toy, seed=7), False)
    rows = sf_gradient_rows(params, toy, batch)
    se = rows.std(axis=0, ddof=1) / np.sqrt(rows.shape[0])
    assert np.all(np.abs(rows.mean(axis=0) - toy.analytic_elbo_grad(params)) <= 3.0 * se)


@pytest.mark.slow
def test_rp_gradient_is_unbiased(toy):
    params = gf.from_moments("rp", [toy.y_star.mean()], [[1.0]])
    batch = draw_batch(params, toy, DIST, 100_000, _plan(toy, seed=8), True)
    rows = rp_gradient_rows(params, toy, batch)
    se = rows.std(axis=0, ddof=1) / np.sqrt(rows.shape[0])
    assert np.all(np.abs(rows.mean(axis=0) - toy.analytic_elbo_grad(params)) <= 3.0 * se)


@pytest.mark.slow
def test_elbo_at_the_posterior_is_the_log_evidence(toy):
    mean, var = toy.abc_posterior()
    params = gf.from_moments("sf", [mean], [[var]])
    est = estimate_elbo(params, toy, DIST, 20_000, Placement.NONE, root_stream(9))
    assert abs(est.value - toy.log_evidence()) <= 4.0 * est.std_error


def test_elbo_terms_combine_prior_and_entropy(constant_model):
    params = gf.from_moments("sf", [0.0], [[1.0]])
    batch = draw_batch(params, constant_model, DIST, 8, _plan(constant_model), False)
    # q equals the prior and log f = 0, so every term is (numerically) zero.
    assert np.allclose(elbo_terms(params, constant_model, batch), 0.0, atol=1e-12)
