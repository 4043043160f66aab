"""Density ratio model fitted by dual composite empirical likelihood.

Populations ``k = 0..m`` are linked through ``dG_k/dG_0 = exp(beta_k^T q(y))``
with ``beta_0 = 0``.  All observations are pooled and treated as independent
for the point fit; the cluster structure only matters to the bootstrap.

The dual objective

    l(beta) = -sum_i log sum_r rho_r exp(beta_r^T q(y_i)) + sum_i beta_{k(i)}^T q(y_i),

with ``rho_r = N_r / N``, is smooth and concave.  It is maximized by BFGS on
an orthogonalized copy of the basis (a fixed linear reparametrization that
leaves the fitted distributions unchanged but makes the problem well
conditioned), starting from the exact curvature at the initial point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceError, DataFormatError, DegenerateMatrixError, DimensionError, ParameterDomainError

GRAD_TOL = 1e-8
MAX_ITER = 500
NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusteredDataset:
    """``m + 1`` samples, each an ``(n_k, d)`` array of clusters; sample 0 is the baseline."""

    populations: tuple[np.ndarray, ...]
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        pops = []
        for k, arr in enumerate(self.populations):
            a = np.array(arr, dtype=float, copy=True)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
                raise DimensionError(f"population {k} must be a non-empty (clusters, d) array")
            if not np.all(np.isfinite(a)):
                raise DataFormatError(f"population {k} has non-finite responses")
            a.setflags(write=False)
            pops.append(a)
        if not pops:
            raise DimensionError("dataset needs at least the baseline population")
        if len({a.shape[1] for a in pops}) != 1:
            raise DimensionError("cluster size d must be the same in every population")
        object.__setattr__(self, "populations", tuple(pops))
        labels = self.labels
        if labels is None:
            labels = tuple(str(k) for k in range(len(pops)))
        if len(labels) != len(pops):
            raise DimensionError("one label per population required")
        object.__setattr__(self, "labels", tuple(str(x) for x in labels))

    @property
    def m(self) -> int:
        return len(self.populations) - 1

    @property
    def d(self) -> int:
        return self.populations[0].shape[1]

    @property
    def n_clusters(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.populations)

    @property
    def n_obs(self) -> int:
        return sum(a.size for a in self.populations)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All responses and their population index, sorted by ``(value, population)``.

        The canonical order makes every downstream sum independent of how
        clusters and units were listed.
        """
        y = np.concatenate([a.ravel() for a in self.populations])
        pop = np.concatenate([np.full(a.size, k) for k, a in enumerate(self.populations)])
        order = np.lexsort((pop, y))
        return y[order], pop[order]

    def resample_clusters(self, gen: np.random.Generator) -> "ClusteredDataset":
        """Draw ``n_k`` whole clusters with replacement within each population."""
        pops = [a[gen.integers(0, a.shape[0], size=a.shape[0])] for a in self.populations]
        return ClusteredDataset(tuple(pops), self.labels)


class BasisForm(str, enum.Enum):
    QUADRATIC = "quadratic"          # (1, y, y^2)
    QUADRATIC_LOG = "quadratic_log"  # (1, y, y^2, log y)


@dataclass(frozen=True)
class BasisSpec:
    form: BasisForm = BasisForm.QUADRATIC

    def __post_init__(self):
        object.__setattr__(self, "form", BasisForm(self.form))

    @property
    def dimension(self) -> int:
        return 3 if self.form is BasisForm.QUADRATIC else 4

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        cols = [np.ones_like(y), y, y * y]
        if self.form is BasisForm.QUADRATIC_LOG:
            if np.any(y <= 0):
                raise ParameterDomainError("the log basis needs strictly positive responses")
            cols.append(np.log(y))
        return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Dual objective
# ---------------------------------------------------------------------------

def _row_lse(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp together with the normalized weights."""
    mx = a.max(axis=1)
    e = np.exp(a - mx[:, None])
    tot = e.sum(axis=1)
    return mx + np.log(tot), e / tot[:, None]


class _Dual:
    """Dual log-likelihood on pooled data in an arbitrary linear basis."""

    def __init__(self, y: np.ndarray, pop: np.ndarray, m: int, qmat: np.ndarray):
        self.y = y
        self.pop = pop
        self.m = m
        self.q = qmat
        n_r = np.bincount(pop, minlength=m + 1).astype(float)
        self.n = float(len(y))
        self.log_rho = np.log(n_r / self.n)
        # sum of q over each non-baseline population, shape (m, q)
        self.own = np.stack([qmat[pop == r].sum(axis=0) for r in range(1, m + 1)]) \
            if m else np.zeros((0, qmat.shape[1]))

    def _eta(self, beta: np.ndarray) -> np.ndarray:
        eta = np.zeros((len(self.y), self.m + 1))
        if self.m:
            eta[:, 1:] = self.q @ beta.T
        return eta

    def value(self, beta: np.ndarray) -> float:
        if self.m == 0:
            return 0.0
        lse, _ = _row_lse(self._eta(beta) + self.log_rho)
        return float(-lse.sum() + np.sum(beta * self.own))

    def value_grad(self, beta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        eta = self._eta(beta)
        lse, w = _row_lse(eta + self.log_rho)  # w: posterior population weights
        val = float(-lse.sum() + np.sum(beta * self.own))
        grad = self.own - w[:, 1:].T @ self.q
        return val, grad, w

    def hessian(self, w: np.ndarray) -> np.ndarray:
        m, q = self.m, self.q.shape[1]
        wr = w[:, 1:]
        h = np.zeros((m, q, m, q))
        for r in range(m):
            for s in range(r, m):
                coef = wr[:, r] * ((r == s) - wr[:, s])
                blk = -(self.q * coef[:, None]).T @ self.q
                h[r, :, s, :] = blk
                h[s, :, r, :] = blk.T
        return h.reshape(m * q, m * q)


def _prepare(data: ClusteredDataset, basis: BasisSpec):
    y, pop = data.pooled()
    return y, pop, basis.evaluate(y)


def _check_beta(beta, m: int, q: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0 and m == 0:
        return np.zeros((0, q))
    if beta.shape != (m, q):
        raise DimensionError(f"beta must have shape ({m}, {q}), got {beta.shape}")
    return beta


def dual_loglik(beta, data: ClusteredDataset, basis: BasisSpec) -> float:
    """Dual composite empirical log-likelihood at ``beta`` (shape ``(m, q)``)."""
    y, pop, qmat = _prepare(data, basis)
    beta = _check_beta(beta, data.m, basis.dimension)
    return _Dual(y, pop, data.m, qmat).value(beta)


def dual_gradient(beta, data: ClusteredDataset, basis: BasisSpec) -> np.ndarray:
    """Analytic gradient of :func:`dual_loglik`, shape ``(m, q)``."""
    y, pop, qmat = _prepare(data, basis)
    beta = _check_beta(beta, data.m, basis.dimension)
    if data.m == 0:
        return np.zeros((0, basis.dimension))
    return _Dual(y, pop, data.m, qmat).value_grad(beta)[1]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DrmFit:
    """Fitted DRM: coefficients and the baseline masses on the pooled support.

    ``final_grad_norm`` is the max-norm of the dual gradient in the
    orthogonalized working basis.
    """

    beta: np.ndarray
    support: np.ndarray
    mass: np.ndarray
    rho: np.ndarray
    basis: BasisSpec
    converged: bool
    final_grad_norm: float
    n_iter: int
    loglik: float
    labels: tuple[str, ...] = ()
    _tilt: np.ndarray = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    def weights(self, r: int) -> np.ndarray:
        """Fitted point masses of population ``r`` on ``support``."""
        if not 0 <= r <= self.m:
            raise DimensionError(f"population index {r} outside 0..{self.m}")
        return self._tilt[r]

    def normalization_error(self) -> float:
        return float(np.max(np.abs(self._tilt.sum(axis=1) - 1.0)))

    def cdf(self, r: int, y):
        """``G_r(y) = sum of masses strictly below y`` (left-continuous)."""
        w = self.weights(r)
        cum = np.concatenate([[0.0], np.cumsum(w)])
        idx = np.searchsorted(self.support, np.asarray(y, dtype=float), side="left")
        out = np.minimum(cum[idx], 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, r: int, alpha):
        """``inf {y : G_r(y) >= alpha}``: the smallest support point whose
        cumulative mass (inclusive) reaches ``alpha``."""
        self._require_converged()
        a = np.asarray(alpha, dtype=float)
        if np.any((a <= 0) | (a >= 1)):
            raise ParameterDomainError("quantile level must lie in (0, 1)")
        cum = np.cumsum(self.weights(r))
        idx = np.searchsorted(cum, a - 1e-12 * np.maximum(a, 1.0), side="left")
        out = self.support[np.minimum(idx, len(self.support) - 1)]
        return float(out) if np.ndim(out) == 0 else out

    def mean(self, r: int) -> float:
        self._require_converged()
        return float(self.weights(r) @ self.support)

    def _require_converged(self):
        if not self.converged:
            raise ConvergenceError(
                f"DRM fit did not converge (grad norm {self.final_grad_norm:.3g} "
                f"after {self.n_iter} iterations)")


def _orthogonalizer(qmat: np.ndarray) -> np.ndarray:
    """Matrix ``T`` with ``qmat @ T`` having orthogonal columns of norm sqrt(N)."""
    n, q = qmat.shape
    r = np.linalg.qr(qmat, mode="r")
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        raise DegenerateMatrixError("basis functions are collinear over the pooled support")
    return np.linalg.inv(r) * np.sqrt(n)


def _bfgs(dual: _Dual, x0: np.ndarray, tol: float, max_iter: int):
    """Maximize ``dual`` from ``x0`` (shape ``(m, q)``).  Returns ``(x, value, gmax, iters, ok)``."""
    shape = x0.shape
    x = x0.ravel().copy()
    f, g, w = dual.value_grad(x.reshape(shape))
    g = g.ravel()
    # work with the negated objective; start from the exact curvature
    try:
        h_inv = np.linalg.inv(-dual.hessian(w))
    except np.linalg.LinAlgError:
        h_inv = np.eye(x.size)
    if not np.all(np.isfinite(h_inv)):
        h_inv = np.eye(x.size)
    it = 0
    while it < max_iter:
        gmax = float(np.max(np.abs(g)))
        if gmax < tol:
            return x.reshape(shape), f, gmax, it, True
        it += 1
        step = h_inv @ g  # ascent direction
        slope = float(g @ step)
        if not slope > 0:
            h_inv = np.eye(x.size)
            step, slope = g.copy(), float(g @ g)
        t = 1.0
        slack = 64 * np.finfo(float).eps * (abs(f) + dual.n)
        while True:
            x_new = x + t * step
            f_new, g_new, w_new = dual.value_grad(x_new.reshape(shape))
            # the slack absorbs rounding in the O(N)-term sum near the optimum,
            # where the true increase falls below machine resolution
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * slope - slack:
                break
            t *= 0.5
            if t < 1e-12:
                # no further ascent possible in floating point
                return x.reshape(shape), f, gmax, it, gmax < tol
        g_new = g_new.ravel()
        s = x_new - x
        yv = g - g_new  # gradient change of the negated objective
        sy = float(s @ yv)
        if sy > 1e-300:
            rho = 1.0 / sy
            hy = h_inv @ yv
            h_inv = (h_inv - rho * (np.outer(s, hy) + np.outer(hy, s))
                     + (rho * rho * float(yv @ hy) + rho) * np.outer(s, s))
        x, f, g = x_new, f_new, g_new
    gmax = float(np.max(np.abs(g)))
    return x.reshape(shape), f, gmax, it, gmax < tol


def fit_drm(data: ClusteredDataset, basis: BasisSpec = BasisSpec(), init=None,
            *, tol: float = GRAD_TOL, max_iter: int = MAX_ITER) -> DrmFit:
    """Maximum dual empirical likelihood fit.

    Non-convergence is reported through ``converged=False`` rather than
    raised; quantile and mean queries on such a fit raise
    :class:`ConvergenceError`.
    """
    y, pop, qmat = _prepare(data, basis)
    m, q = data.m, basis.dimension
    support, inverse = np.unique(y, return_inverse=True)
    if len(support) < q + 1:
        raise DegenerateMatrixError(
            f"pooled support has {len(support)} distinct points, need at least {q + 1}")
    n = len(y)

    if m == 0:
        beta = np.zeros((0, q))
        counts = np.bincount(inverse).astype(float)
        mass = counts / n
        return DrmFit(beta, support, mass, np.array([1.0]), basis, True, 0.0, 0, 0.0,
                      data.labels, _tilt=mass[None, :].copy())

    tmat = _orthogonalizer(qmat)
    dual = _Dual(y, pop, m, qmat @ tmat)
    if init is None:
        x0 = np.zeros((m, q))
    else:
        # beta = gamma T^T  <=>  gamma = beta T^{-T}
        x0 = _check_beta(init, m, q) @ np.linalg.inv(tmat).T
    x, val, gmax, n_iter, ok = _bfgs(dual, x0, tol, max_iter)
    beta = x @ tmat.T

    # baseline masses on distinct support points (ties merged)
    eta = np.zeros((len(support), m + 1))
    eta[:, 1:] = basis.evaluate(support) @ beta.T
    counts = np.bincount(inverse).astype(float)
    denom = np.exp(_row_lse(eta + dual.log_rho)[0])
    mass = counts / (n * denom)
    tilt = mass[None, :] * np.exp(eta.T)
    fit = DrmFit(beta, support, mass, np.exp(dual.log_rho), basis, bool(ok), gmax,
                 n_iter, val, data.labels, _tilt=tilt)
    if ok and fit.normalization_error() > NORM_TOL:
        fit = DrmFit(beta, support, mass, fit.rho, basis, False, gmax, n_iter, val,
                     data.labels, _tilt=tilt)
    return fit


def fitted_cdf(fit: DrmFit, r: int, y):
    return fit.cdf(r, y)


def quantile(fit: DrmFit, r: int, alpha):
    return fit.quantile(r, alpha)


def mean(fit: DrmFit, r: int) -> float:
    return fit.mean(r)


def quantile_differences(fit: DrmFit, levels: Sequence[float] = (0.05, 0.5)) -> np.ndarray:
    """``theta_k = (xi_{k,a} - xi_{0,a})`` for each level ``a``; shape ``(m, len(levels))``."""
    levels = np.asarray(levels, dtype=float)
    base = fit.quantile(0, levels)
    return np.stack([fit.quantile(k, levels) - base for k in range(1, fit.m + 1)]) \
        if fit.m else np.zeros((0, len(levels)))
