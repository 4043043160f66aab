"""Small dense symmetric positive-definite matrices.

Dimensions here are tiny (the tests only ever need p <= 8), so everything
is dense numpy with a lazily computed Cholesky factor.  Near-singular inputs
raise :class:`DegenerateMatrixError` instead of being quietly regularized:
a silent ridge would shift every p-value computed downstream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from .errors import DegenerateMatrixError, DimensionError

MAX_DIM = 8
# a Cholesky pivot below this fraction of the largest pivot counts as singular
PIVOT_RTOL = 1e-10
COND_LIMIT = 1e12
RHO_CLAMP = 1e-12


class SpdMatrix:
    """Immutable symmetric matrix with a lazily computed Cholesky factor.

    Construction only checks shape, finiteness and symmetry; positive
    definiteness is checked the first time the factor is needed, so a
    positive *semi*-definite matrix (a bootstrap covariance of a constant
    functional, say) can still be held and inspected.
    """

    __slots__ = ("_a", "_chol")

    def __init__(self, entries, *, sym_rtol: float = 1e-10):
        a = np.array(entries, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
        if a.shape[0] > MAX_DIM:
            raise DimensionError(f"dimension {a.shape[0]} exceeds supported maximum {MAX_DIM}")
        if not np.all(np.isfinite(a)):
            raise DegenerateMatrixError("matrix has non-finite entries")
        scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
        if np.max(np.abs(a - a.T)) > sym_rtol * scale:
            raise DegenerateMatrixError("matrix is not symmetric")
        # keep the lower triangle only, mirrored, so symmetry is exact
        a = np.tril(a) + np.tril(a, -1).T
        a.setflags(write=False)
        self._a = a
        self._chol = None

    @classmethod
    def identity(cls, p: int) -> "SpdMatrix":
        return cls(np.eye(p))

    @property
    def entries(self) -> np.ndarray:
        return self._a

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._a, dtype=dtype)

    def __repr__(self):
        return f"SpdMatrix({self._a.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, SpdMatrix) and np.array_equal(self._a, other._a)

    __hash__ = None

    @property
    def chol(self) -> np.ndarray:
        """Lower-triangular ``L`` with ``L @ L.T == A``."""
        if self._chol is None:
            try:
                L = np.linalg.cholesky(self._a)
            except np.linalg.LinAlgError as exc:
                raise DegenerateMatrixError("matrix is not positive definite") from exc
            piv = np.diag(L)
            if not np.all(piv > PIVOT_RTOL * piv.max()):
                raise DegenerateMatrixError(
                    f"matrix is numerically singular (pivots {piv.tolist()})")
            L.setflags(write=False)
            self._chol = L
        return self._chol

    @property
    def usable(self) -> bool:
        """Factorizable with condition number below ``COND_LIMIT``."""
        try:
            self.chol
        except DegenerateMatrixError:
            return False
        return self.condition() < COND_LIMIT

    def condition(self) -> float:
        w = np.linalg.eigvalsh(self._a)
        if w[0] <= 0:
            return np.inf
        return float(w[-1] / w[0])

    def solve(self, b) -> np.ndarray:
        return sla.cho_solve((self.chol, True), np.asarray(b, dtype=float))

    def inverse(self) -> "SpdMatrix":
        return SpdMatrix(self.solve(np.eye(self.dim)), sym_rtol=1e-8)

    def submatrix(self, idx: Sequence[int]) -> "SpdMatrix":
        idx = list(idx)
        return SpdMatrix(self._a[np.ix_(idx, idx)])

    def scaled(self, c: float) -> "SpdMatrix":
        return SpdMatrix(c * self._a)

    def correlation(self) -> np.ndarray:
        """Full correlation matrix (diagonal exactly one)."""
        d = np.sqrt(np.diag(self._a))
        if np.any(d <= 0):
            raise DegenerateMatrixError("zero variance on the diagonal")
        r = self._a / np.outer(d, d)
        np.fill_diagonal(r, 1.0)
        return np.clip(r, -1.0, 1.0)


class CovKind(str, enum.Enum):
    # S is the covariance of a single observation; the estimator has S / n
    PER_OBSERVATION = "per_observation"
    # S_n is the covariance of the estimator itself
    OF_ESTIMATOR = "of_estimator"


@dataclass(frozen=True)
class CovEstimate:
    """A covariance matrix together with the sample size it came from."""

    matrix: SpdMatrix
    sample_size: int
    kind: CovKind = CovKind.PER_OBSERVATION

    def __post_init__(self):
        if not isinstance(self.matrix, SpdMatrix):
            object.__setattr__(self, "matrix", SpdMatrix(self.matrix))
        object.__setattr__(self, "kind", CovKind(self.kind))
        n = int(self.sample_size)
        if n < 1:
            raise DimensionError(f"sample_size must be positive, got {self.sample_size}")
        if self.kind is CovKind.PER_OBSERVATION and n < self.matrix.dim + 1:
            raise DimensionError(
                f"per-observation covariance needs n >= p + 1 = {self.matrix.dim + 1}, got {n}")
        object.__setattr__(self, "sample_size", n)

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def estimator_cov(self) -> SpdMatrix:
        """Covariance of the estimator: ``S / n`` or ``S_n`` as stored."""
        if self.kind is CovKind.OF_ESTIMATOR:
            return self.matrix
        return self.matrix.scaled(1.0 / self.sample_size)


def quad_form(A: SpdMatrix, v) -> float:
    """``v^T A^{-1} v`` through the Cholesky factor (no explicit inverse)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (A.dim,):
        raise DimensionError(f"vector of shape {v.shape} does not match dimension {A.dim}")
    z = sla.solve_triangular(A.chol, v, lower=True)
    return float(z @ z)


def correlation_of(A: SpdMatrix, i: int, j: int) -> float:
    """Correlation between coordinates ``i`` and ``j``, clamped away from +-1.

    The clamp keeps ``arccos`` and the conditional covariances finite.
    """
    if i == j:
        raise DimensionError("correlation_of needs two distinct indices")
    a = A.entries
    if a[i, i] <= 0 or a[j, j] <= 0:
        raise DegenerateMatrixError("zero variance on the diagonal")
    r = a[i, j] / np.sqrt(a[i, i] * a[j, j])
    return float(np.clip(r, -1.0 + RHO_CLAMP, 1.0 - RHO_CLAMP))


def conditional_cov(A: SpdMatrix, s: Sequence[int]) -> SpdMatrix:
    """Covariance of ``X[s']`` given ``X[s] = 0``: the Schur complement of ``A_ss``."""
    p = A.dim
    s = sorted(set(int(i) for i in s))
    if not s or len(s) >= p or s[0] < 0 or s[-1] >= p:
        raise DimensionError(f"{s} is not a nonempty proper subset of range({p})")
    rest = [i for i in range(p) if i not in s]
    a = A.entries
    a_ss = A.submatrix(s)
    a_rs = a[np.ix_(rest, s)]
    schur = a[np.ix_(rest, rest)] - a_rs @ a_ss.solve(a_rs.T)
    return SpdMatrix((schur + schur.T) / 2.0)


def sample_covariance(y, ddof: int = 0) -> np.ndarray:
    """Covariance of the rows of ``y`` with divisor ``n - ddof`` (default ``n``)."""
    y = np.asarray(y, dtype=float)
    z = y - y.mean(axis=0)
    return z.T @ z / (y.shape[0] - ddof)
