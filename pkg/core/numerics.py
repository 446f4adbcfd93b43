# =============================================================================
# core/numerics.py  —  Special Functions & Small Dense Linear Algebra
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   The handful of numerical primitives the Gaussian family, the models and
#   the synthetic-likelihood baseline share:
#     - Φ, Φ⁻¹ and ψ (digamma) with explicit domain checks
#     - packed lower-triangular storage (vech) and Cholesky factors
#     - triangular solves and Gaussian log-densities without inverses
#
#   Everything delegates to scipy.special / scipy.linalg; this file only adds
#   the domain contracts and the vech bookkeeping.
# =============================================================================

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, special
from scipy.linalg import lapack

from core.errors import ConfigurationError, DecompositionError, DomainError

LOG_2PI = float(np.log(2.0 * np.pi))


# =============================================================================
# Special functions
# =============================================================================
def normal_cdf(x):
    """Standard normal CDF Φ."""
    return special.ndtr(x)


def normal_inv_cdf(p):
    """Standard normal quantile Φ⁻¹ for p in the open interval (0, 1).

    Accepts a scalar or an array.  Raises DomainError when any value is
    outside (0, 1) or NaN.
    """
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("normal_inv_cdf needs 0 < p < 1", value=p)
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def digamma(t):
    """ψ(t) = Γ'(t)/Γ(t) for t > 0."""
    arr = np.asarray(t, dtype=float)
    if not np.all(arr > 0.0):
        raise DomainError("digamma needs t > 0", value=t)
    out = special.digamma(arr)
    return float(out) if out.ndim == 0 else out


# =============================================================================
# Packed lower-triangular storage
# =============================================================================
@lru_cache(maxsize=64)
def tril_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of the lower triangle in column-major (vech) order."""
    upper_rows, upper_cols = np.triu_indices(p)
    # Transposing the row-major upper triangle walks the lower triangle
    # column by column.
    return upper_cols, upper_rows


def vech_size(p: int) -> int:
    return p * (p + 1) // 2


def order_from_size(size: int) -> int:
    p = int(round((np.sqrt(8 * size + 1) - 1) / 2))
    if vech_size(p) != size:
        raise ConfigurationError(f"{size} is not a triangular number")
    return p


def vech(matrix: np.ndarray) -> np.ndarray:
    """Stack the columns of the lower triangle of the last two axes."""
    matrix = np.asarray(matrix, dtype=float)
    rows, cols = tril_indices(matrix.shape[-1])
    return matrix[..., rows, cols]


def unvech(entries: np.ndarray, p: int | None = None) -> np.ndarray:
    """Inverse of vech: a dense lower-triangular matrix (zeros above)."""
    entries = np.asarray(entries, dtype=float)
    if p is None:
        p = order_from_size(entries.shape[-1])
    rows, cols = tril_indices(p)
    out = np.zeros(entries.shape[:-1] + (p, p))
    out[..., rows, cols] = entries
    return out


def diagonal_positions(p: int) -> np.ndarray:
    """Positions of the diagonal entries inside a vech vector."""
    rows, cols = tril_indices(p)
    return np.flatnonzero(rows == cols)


@dataclass(frozen=True, eq=False)
class LowerTriangular:
    """A p×p lower-triangular matrix stored as its vech."""

    order: int
    entries: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError("triangular order must be positive")
        if np.shape(self.entries) != (vech_size(self.order),):
            raise ConfigurationError(
                f"order {self.order} needs {vech_size(self.order)} entries, "
                f"got shape {np.shape(self.entries)}"
            )

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "LowerTriangular":
        matrix = np.asarray(matrix, dtype=float)
        return cls(order=matrix.shape[0], entries=vech(matrix))

    def dense(self) -> np.ndarray:
        return unvech(self.entries, self.order)

    def diagonal(self) -> np.ndarray:
        return self.entries[diagonal_positions(self.order)]

    def is_valid_cholesky(self) -> bool:
        return bool(np.all(self.diagonal() > 0.0))

    def log_det(self) -> float:
        """log|det| of the triangular matrix itself (not of L·Lᵀ)."""
        return float(np.sum(np.log(np.abs(self.diagonal()))))


# =============================================================================
# Linear algebra
# =============================================================================
def cholesky(S: np.ndarray) -> LowerTriangular:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises:
        ConfigurationError: S is not square or not symmetric within 1e-12
            (relative to its largest entry).
        DecompositionError: a non-positive pivot was met; `pivot` is its
            0-based index.
    """
    S = np.array(S, dtype=float, ndmin=2)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ConfigurationError(f"cholesky needs a square matrix, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * scale):
        raise ConfigurationError("cholesky needs a symmetric matrix")
    factor, info = lapack.dpotrf(S, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1
        )
    if info < 0:
        raise ConfigurationError(f"dpotrf rejected argument {-info}")
    return LowerTriangular.from_dense(factor)


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L (b may hold several columns)."""
    return linalg.solve_triangular(L, b, lower=True)


def solve_lower_transpose(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve Lᵀ x = b for lower-triangular L."""
    return linalg.solve_triangular(L, b, lower=True, trans="T")


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(L Lᵀ)⁻¹ b via two triangular solves."""
    return solve_lower_transpose(L, solve_lower(L, b))


def mvn_logpdf(x, mean, cov_chol: LowerTriangular):
    """log N(x; mean, L Lᵀ).  `x` may be a p-vector or an (n, p) batch."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    p = cov_chol.order
    if x.shape[-1] != p or mean.shape != (p,):
        raise ConfigurationError(
            f"mvn_logpdf dimension mismatch: x {x.shape}, mean {mean.shape}, order {p}"
        )
    resid = np.atleast_2d(x - mean)
    z = solve_lower(cov_chol.dense(), resid.T)
    out = -0.5 * p * LOG_2PI - cov_chol.log_det() - 0.5 * np.sum(z * z, axis=0)
    return float(out[0]) if x.ndim == 1 else out
