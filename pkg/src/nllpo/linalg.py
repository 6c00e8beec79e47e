"""Dense linear algebra on small symmetric positive-definite matrices.

Plain ``numpy.ndarray`` objects stand in for general matrices and vectors.
:class:`SpdMatrix` stores the lower Cholesky factor and is immutable.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite, NotSquare

SYMMETRY_RTOL = 1e-10


def as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=float, ndmin=2, copy=True)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_vector(v) -> np.ndarray:
    a = np.array(v, dtype=float, ndmin=1, copy=True)
    if a.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector has non-finite entries")
    return a


class SpdMatrix:
    """Symmetric positive-definite matrix held through its Cholesky factor ``L``.

    Construct with :func:`cholesky` or :meth:`from_factor`; the dense matrix is
    available as :attr:`matrix` and is recomputed as ``L @ L.T``.
    """

    __slots__ = ("_factor", "_matrix")

    def __init__(self, factor: np.ndarray):
        factor = np.tril(as_matrix(factor))
        if factor.shape[0] != factor.shape[1]:
            raise NotSquare(f"Cholesky factor must be square, got {factor.shape}")
        if np.any(np.diag(factor) <= 0):
            raise NotPositiveDefinite("Cholesky factor needs a strictly positive diagonal")
        factor.setflags(write=False)
        self._factor = factor
        matrix = factor @ factor.T
        matrix = 0.5 * (matrix + matrix.T)
        matrix.setflags(write=False)
        self._matrix = matrix

    @classmethod
    def from_factor(cls, factor) -> "SpdMatrix":
        return cls(factor)

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SpdMatrix":
        values = as_vector(values)
        if np.any(values <= 0):
            raise NotPositiveDefinite("diagonal entries must be positive")
        return cls(np.diag(np.sqrt(values)))

    @property
    def dim(self) -> int:
        return self._factor.shape[0]

    @property
    def factor(self) -> np.ndarray:
        return self._factor

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def scaled(self, c: float) -> "SpdMatrix":
        if c <= 0:
            raise NotPositiveDefinite("scale must be positive")
        return SpdMatrix(np.sqrt(c) * self._factor)

    def solve(self, rhs) -> np.ndarray:
        return sla.cho_solve((self._factor, True), np.asarray(rhs, dtype=float))

    def __array__(self, dtype=None, copy=None):
        return np.array(self._matrix, dtype=dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, matrix={self._matrix.tolist()})"


def _check_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSquare(f"expected a square matrix, got shape {m.shape}")


def cholesky(m) -> SpdMatrix:
    """Factor a symmetric matrix as ``L @ L.T``.

    The input is symmetrized before factoring. Raises
    :class:`NotPositiveDefinite` on a non-positive pivot; no jitter is added.
    """
    if isinstance(m, SpdMatrix):
        return m
    a = as_matrix(m)
    _check_square(a)
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric within relative tolerance 1e-10")
    a = 0.5 * (a + a.T)
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.isfinite(factor)) or np.any(np.diag(factor) <= 0):
        raise NotPositiveDefinite("non-positive pivot")
    return SpdMatrix(factor)


def spd_inverse(m: SpdMatrix) -> SpdMatrix:
    m = cholesky(m)
    inv_factor = sla.solve_triangular(m.factor, np.eye(m.dim), lower=True)
    # (L L^T)^-1 = L^-T L^-1; refactor to get a lower factor.
    return cholesky(inv_factor.T @ inv_factor)


def log_det(m: SpdMatrix) -> float:
    m = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(m.factor))))


def quadratic_form(u: SpdMatrix, d) -> float:
    """Return ``d^T U d`` (callers negate it to get the reward)."""
    u = cholesky(u)
    d = as_vector(d)
    if d.shape[0] != u.dim:
        raise DimensionMismatch(f"vector has length {d.shape[0]}, matrix dim is {u.dim}")
    w = u.factor.T @ d
    return float(w @ w)


def trace(m) -> float:
    if isinstance(m, SpdMatrix):
        m = m.matrix
    a = np.asarray(m, dtype=float)
    _check_square(a)
    return float(np.trace(a))


def random_spd(dim: int, rng: np.random.Generator, eps: float = 0.1) -> SpdMatrix:
    """Draw ``G^T G / dim + eps I`` with Gaussian ``G``."""
    g = rng.standard_normal((dim, dim))
    return cholesky(g.T @ g / dim + eps * np.eye(dim))
