# =============================================================================
# core/qmc.py  —  Uniform Point Streams (pseudorandom and scrambled Sobol)
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Turns an immutable PointStream descriptor into points in [0,1)^s.  Two
#   kinds sit behind one interface:
#     - PSEUDORANDOM   numpy Generator (PCG64) seeded from the descriptor
#     - SCRAMBLED_NET  scipy.stats.qmc.Sobol with LMS + digital-shift
#                      scrambling, seeded from the same descriptor
#
# SEEDING:
#   Every descriptor maps to SeedSequence(seed, spawn_key=lineage + (rep,)).
#   Child streams extend the lineage, so the whole tree of streams the engine
#   uses (iteration -> outer / levels / inner_i) is reproducible from one
#   integer and every branch gets an independent randomization.
#
# SOBOL DETAILS:
#   - Direction numbers: the Joe–Kuo table bundled with scipy (21201 dims).
#   - Output precision: bits=53, so every coordinate is an exact multiple of
#     2^-53 and strictly below 1.
#   - scramble=False is for tests only; its first point is the origin.
# =============================================================================

from __future__ import annotations

import logging
import warnings
from dataclasses import replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from core.errors import ConfigurationError
from core.models import PointKind, PointStream, SlopeFit

logger = logging.getLogger(__name__)

MAX_DIMENSION = 21201
SOBOL_BITS = 53

_OPEN_LOW = np.finfo(float).tiny
_OPEN_HIGH = np.nextafter(1.0, 0.0)


# =============================================================================
# Stream descriptors
# =============================================================================
def root_stream(seed: int, kind: PointKind = PointKind.PSEUDORANDOM, dimension: int = 1) -> PointStream:
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    return PointStream(kind=kind, dimension=dimension, seed=int(seed))


def child(
    stream: PointStream,
    index: int,
    *,
    kind: Optional[PointKind] = None,
    dimension: Optional[int] = None,
) -> PointStream:
    """The `index`-th child of `stream`, optionally re-typed.

    Children of the same parent with different indices are independent;
    the same (parent, index) always yields the same child.
    """
    return replace(
        stream,
        kind=stream.kind if kind is None else kind,
        dimension=stream.dimension if dimension is None else dimension,
        replicate_index=int(index),
        lineage=stream.key,
    )


def split(stream: PointStream, n: int) -> list[PointStream]:
    """n independent replicates of `stream` (distinct replicate indices)."""
    if n < 1:
        raise ConfigurationError(f"split needs n >= 1, got {n}")
    return [child(stream, i) for i in range(n)]


def stream_rng(stream: PointStream) -> np.random.Generator:
    """The numpy Generator owned by a descriptor."""
    return np.random.default_rng(np.random.SeedSequence(stream.seed, spawn_key=stream.key))


def _check(stream: PointStream) -> None:
    if stream.dimension < 1:
        raise ConfigurationError("point streams need dimension >= 1")
    if stream.kind is PointKind.SCRAMBLED_NET and stream.dimension > MAX_DIMENSION:
        raise ConfigurationError(
            f"scrambled nets support at most {MAX_DIMENSION} dimensions, "
            f"got {stream.dimension}"
        )


def _sobol(stream: PointStream) -> qmc.Sobol:
    return qmc.Sobol(
        d=stream.dimension,
        scramble=stream.scramble,
        bits=SOBOL_BITS,
        rng=stream_rng(stream),
    )


# =============================================================================
# Point generation
# =============================================================================
class PointSource:
    """Sequential reader over one stream.

    Consecutive take() calls return consecutive points, so a source can hand
    out the first half of a sample and then the second half while the union
    is exactly the prefix generate(stream, total).
    """

    def __init__(self, stream: PointStream):
        _check(stream)
        self.stream = stream
        self.consumed = 0
        if stream.kind is PointKind.SCRAMBLED_NET:
            self._engine = _sobol(stream)
            self._rng = None
        else:
            self._engine = None
            self._rng = stream_rng(stream)

    @property
    def dimension(self) -> int:
        return self.stream.dimension

    def take(self, count: int) -> np.ndarray:
        if count < 1:
            raise ConfigurationError(f"point count must be >= 1, got {count}")
        self.consumed += count
        if self._engine is None:
            return self._rng.random((count, self.stream.dimension))
        with warnings.catch_warnings():
            # Balance only holds on power-of-two prefixes; the MLMC batches
            # are powers of two, other callers accept the weaker guarantee.
            warnings.simplefilter("ignore", UserWarning)
            return self._engine.random(count)


def generate(stream: PointStream, count: int) -> np.ndarray:
    """The first `count` points of `stream` as a (count, s) matrix."""
    return PointSource(stream).take(count)


def open_unit(u: np.ndarray) -> np.ndarray:
    """Clamp uniforms into the open interval (0, 1) for quantile transforms."""
    return np.clip(u, _OPEN_LOW, _OPEN_HIGH)


def normals(stream: PointStream, count: int) -> np.ndarray:
    """Standard normals Φ⁻¹(v) for the first `count` points of `stream`."""
    return ndtri(open_unit(generate(stream, count)))


# =============================================================================
# Variance-rate harness
# =============================================================================
def variance_slope(
    integrand: Callable[[np.ndarray], np.ndarray],
    kind: PointKind,
    sizes: Sequence[int],
    replicates: int,
    dimension: int,
    seed: int = 0,
) -> SlopeFit:
    """Slope of log2 Var[sample mean] against log2 N.

    For each N in `sizes`, `replicates` independent streams each estimate
    the mean of `integrand` with N points; the empirical variance of those
    estimates is regressed on N in log-log scale.

    A zero variance at any size (e.g. a constant integrand) makes the fit
    meaningless; the result is then flagged `degenerate` with a NaN slope.
    """
    sizes = [int(n) for n in sizes]
    if len(sizes) < 2:
        raise ConfigurationError("variance_slope needs at least two sample sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigurationError("sample sizes must be strictly increasing")
    if any(n < 1 or n & (n - 1) for n in sizes):
        raise ConfigurationError("sample sizes must be powers of two")
    if replicates < 8:
        raise ConfigurationError(f"variance_slope needs >= 8 replicates, got {replicates}")

    root = PointStream(kind=kind, dimension=dimension, seed=seed)
    variances = []
    for k, n in enumerate(sizes):
        means = [
            float(np.mean(integrand(generate(rep, n))))
            for rep in split(child(root, k), replicates)
        ]
        variances.append(float(np.var(means, ddof=1)))

    log2_sizes = np.log2(np.asarray(sizes, dtype=float))
    variances = np.asarray(variances)
    if np.any(variances <= 0.0):
        logger.warning("variance_slope: zero variance at some size; fit flagged degenerate")
        return SlopeFit(
            slope=float("nan"),
            degenerate=True,
            log2_sizes=log2_sizes,
            log2_variances=np.full_like(variances, -np.inf),
        )
    log2_var = np.log2(variances)
    slope = float(np.polyfit(log2_sizes, log2_var, 1)[0])
    return SlopeFit(slope=slope, degenerate=False, log2_sizes=log2_sizes, log2_variances=log2_var)
