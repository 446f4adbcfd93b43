import numpy as np
import pytest

from core.errors import ConfigurationError
from core.models import PointKind, PointStream
from core.qmc import (
    MAX_DIMENSION,
    PointSource,
    child,
    generate,
    normals,
    root_stream,
    split,
    variance_slope,
)


def test_scrambled_net_is_balanced_on_dyadic_intervals():
    pts = generate(root_stream(3, PointKind.SCRAMBLED_NET, 5), 1024)
    assert pts.shape == (1024, 5)
    assert np.all((pts >= 0.0) & (pts < 1.0))
    for m in range(1, 11):
        n = 2 ** m
        cells = np.floor(pts[:n] * n).astype(int)
        for j in range(5):
            assert np.array_equal(np.bincount(cells[:, j], minlength=n), np.ones(n, dtype=int))


def test_scrambled_points_are_marginally_uniform():
    reps = split(root_stream(11, PointKind.SCRAMBLED_NET, 3), 512)
    pts = np.stack([generate(rep, 8) for rep in reps])   # (scramblings, index, coordinate)
    assert np.all(np.abs(pts.mean(axis=0) - 0.5) <= 4.0 / np.sqrt(512))
    # Without scrambling point 0 would sit at the origin in every replicate.
    assert np.abs(pts[:, 0, :].var(axis=0) - 1.0 / 12.0).max() < 0.02


@pytest.mark.parametrize("kind", list(PointKind))
def test_same_descriptor_gives_identical_points(kind):
    stream = child(root_stream(42, kind, 3), 7)
    assert np.array_equal(generate(stream, 64), generate(stream, 64))


@pytest.mark.parametrize("kind", list(PointKind))
def test_children_are_distinct(kind):
    root = root_stream(0, kind, 2)
    a, b = generate(child(root, 0), 16), generate(child(root, 1), 16)
    assert not np.allclose(a, b)


def test_child_retypes_and_extends_lineage():
    root = root_stream(5)
    c = child(root, 3, kind=PointKind.SCRAMBLED_NET, dimension=4)
    assert c.kind is PointKind.SCRAMBLED_NET
    assert c.dimension == 4
    assert c.key == (0, 3)
    assert child(c, 1).key == (0, 3, 1)


def test_split_gives_distinct_replicates():
    reps = split(root_stream(1), 4)
    assert len({r.key for r in reps}) == 4
    with pytest.raises(ConfigurationError):
        split(root_stream(1), 0)


def test_consecutive_takes_equal_one_prefix():
    for kind in PointKind:
        stream = root_stream(9, kind, 3)
        source = PointSource(stream)
        parts = np.vstack([source.take(8), source.take(8)])
        assert np.allclose(parts, generate(stream, 16))
        assert source.consumed == 16


def test_unscrambled_net_starts_at_origin():
    stream = PointStream(kind=PointKind.SCRAMBLED_NET, dimension=3, seed=0, scramble=False)
    assert np.array_equal(generate(stream, 4)[0], np.zeros(3))


def test_dimension_limits():
    with pytest.raises(ConfigurationError):
        generate(root_stream(0, PointKind.SCRAMBLED_NET, MAX_DIMENSION + 1), 2)
    with pytest.raises(ConfigurationError):
        generate(root_stream(0, PointKind.PSEUDORANDOM, 0), 2)
    with pytest.raises(ConfigurationError):
        generate(root_stream(0), 0)
    with pytest.raises(ConfigurationError):
        root_stream(-1)


def test_normals_are_finite_and_standardised():
    z = normals(root_stream(4, PointKind.SCRAMBLED_NET, 2), 4096)
    assert np.all(np.isfinite(z))
    assert np.allclose(z.mean(axis=0), 0.0, atol=0.01)
    assert np.allclose(z.std(axis=0), 1.0, atol=0.02)


def _smooth(u):
    return np.prod(u * np.exp(u), axis=1)


def test_variance_slope_separates_mc_from_rqmc():
    sizes = [2 ** k for k in range(6, 13)]
    mc = variance_slope(_smooth, PointKind.PSEUDORANDOM, sizes, replicates=100, dimension=2, seed=1)
    rqmc = variance_slope(_smooth, PointKind.SCRAMBLED_NET, sizes, replicates=100, dimension=2, seed=1)
    assert not mc.degenerate and not rqmc.degenerate
    assert mc.slope == pytest.approx(-1.0, abs=0.15)
    assert rqmc.slope <= -1.8


def test_variance_slope_flags_constant_integrand():
    fit = variance_slope(
        lambda u: np.ones(u.shape[0]), PointKind.SCRAMBLED_NET, [16, 32, 64], replicates=8, dimension=1
    )
    assert fit.degenerate
    assert np.isnan(fit.slope)


@pytest.mark.parametrize(
    "sizes, replicates",
    [([16], 8), ([32, 16], 8), ([16, 24], 8), ([16, 32], 4)],
)
def test_variance_slope_validates_arguments(sizes, replicates):
    with pytest.raises(ConfigurationError):
        variance_slope(_smooth, PointKind.PSEUDORANDOM, sizes, replicates, dimension=2)


def _product(v):
    return np.prod(1.0 + 0.1 * (v - 0.5), axis=1)


def test_variance_slope_on_the_product_integrand():
    sizes = [2 ** k for k in range(6, 13)]
    mc = variance_slope(_product, PointKind.PSEUDORANDOM, sizes, replicates=100, dimension=4, seed=2)
    rqmc = variance_slope(_product, PointKind.SCRAMBLED_NET, sizes, replicates=100, dimension=4, seed=2)
    assert mc.slope == pytest.approx(-1.0, abs=0.15)
    assert rqmc.slope <= -1.8
    assert rqmc.slope < mc.slope
