"""One-sided multi-parameter tests of ``H0: mu <= 0``.

Four procedures share the projection statistic ``T_n`` from :mod:`.cone`:

* ``LRT``  - calibrated against the least favorable null (correlation -> -1),
  whose null law is the two-term F mixture with weights 1/2, 1/2.
* ``mLR``  - the same statistic calibrated against the F mixture with the
  *estimated* correlation structure plugged into the orthant weights.
* ``PW``   - Perlman-Wu: the full quadratic and at least one marginal t test
  must both reject; the LRT rejection region is contained in it.
* ``UIT``  - union-intersection over the coordinates (exact under a known
  identity covariance, Bonferroni otherwise).

Every test can be calibrated with exact F tails (normal theory, the
default) or with large-sample chi-square tails.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize

from . import probcore as pc
from .cone import t_statistic
from .errors import DimensionError, ParameterDomainError, UnsupportedDimensionError
from .linalg import CovEstimate, CovKind, SpdMatrix, RHO_CLAMP, conditional_cov, quad_form

DEFAULT_N_MC = 200_000
# fixed stream for the plug-in orthant probabilities when p >= 3
_MLR_STREAM = pc.RngStream(seed=0x6D4C52, stream_id=0)


class Calibration(str, enum.Enum):
    EXACT_F = "exact_f"
    ASYMPTOTIC_CHISQ = "asymptotic_chisq"


class Method(str, enum.Enum):
    LRT = "LRT"
    MLR = "mLR"
    PW = "PW"
    UIT = "UIT"


@dataclass(frozen=True)
class TestOutcome:
    method: Method
    statistic: float
    p_value: float
    calibration: Calibration
    reject: bool
    alpha: float
    rho_used: Union[float, np.ndarray, None] = None
    details: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class MixtureWeights:
    """Mixture weights ``w_s`` for every nonempty subset, plus the atom at 0."""

    subsets: tuple[tuple[int, ...], ...]
    weights: np.ndarray
    zero_mass: float

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.subsets])

    def by_size(self) -> dict[int, float]:
        """Weights aggregated by ``|s|`` (the survival only depends on the size)."""
        out: dict[int, float] = {}
        for s, w in zip(self.subsets, self.weights):
            out[len(s)] = out.get(len(s), 0.0) + float(w)
        return out


def _calibration(c) -> Calibration:
    return Calibration(c)


# ---------------------------------------------------------------------------
# Orthant probabilities and mixture weights
# ---------------------------------------------------------------------------

def orthant_probability(sigma: SpdMatrix, n_mc: int = DEFAULT_N_MC,
                        rng: Optional[pc.GeneratorLike] = None) -> float:
    """``P(X > 0)`` for ``X ~ MVN(0, sigma)``.

    Exact for ``p <= 2``; a plain Monte Carlo proportion otherwise.
    """
    p = sigma.dim
    if p == 1:
        sigma.chol
        return 0.5
    if p == 2:
        sigma.chol
        a = sigma.entries
        rho = np.clip(a[0, 1] / np.sqrt(a[0, 0] * a[1, 1]), -1 + RHO_CLAMP, 1 - RHO_CLAMP)
        return 0.25 + np.arcsin(rho) / (2.0 * np.pi)
    gen = pc.as_generator(rng if rng is not None else _MLR_STREAM)
    z = gen.standard_normal((int(n_mc), p)) @ sigma.chol.T
    return float(np.mean(np.all(z > 0, axis=1)))


def mixture_weights(sigma: SpdMatrix, n_mc: int = DEFAULT_N_MC,
                    rng: Optional[pc.RngStream] = None) -> MixtureWeights:
    """``w_s = Pr{Sigma_s^{-1}} Pr{Sigma_{s'|s}}`` for each nonempty ``s``.

    Each Monte Carlo orthant probability uses its own substream of ``rng``
    so the weights do not depend on enumeration order.
    """
    p = sigma.dim
    base = rng if rng is not None else _MLR_STREAM
    if not isinstance(base, pc.RngStream):
        raise TypeError("mixture_weights needs an RngStream to derive substreams")
    subsets, weights = [], []
    for k in range(1, p + 1):
        for s in itertools.combinations(range(p), k):
            idx = len(subsets)
            w = orthant_probability(sigma.submatrix(s).inverse(), n_mc, base.spawn(idx, 0))
            if k < p:
                w *= orthant_probability(conditional_cov(sigma, s), n_mc, base.spawn(idx, 1))
            subsets.append(s)
            weights.append(w)
    weights = np.array(weights)
    return MixtureWeights(tuple(subsets), weights, float(1.0 - weights.sum()))


def weights_2d(rho: float) -> MixtureWeights:
    """Closed-form weights for ``p = 2``: 1/4, 1/4 and ``arccos(rho) / (2 pi)``."""
    rho = float(np.clip(rho, -1 + RHO_CLAMP, 1 - RHO_CLAMP))
    w12 = np.arccos(rho) / (2.0 * np.pi)
    w = np.array([0.25, 0.25, w12])
    return MixtureWeights(((0,), (1,), (0, 1)), w, float(0.5 - w12))


# ---------------------------------------------------------------------------
# Null distributions
# ---------------------------------------------------------------------------

def component_survival(k: int, c, n: int, calibration=Calibration.EXACT_F):
    """Tail of one mixture component: ``P(F_{k,n-k} > (1/k - 1/n) c)`` or ``P(chi2_k > c)``."""
    calibration = _calibration(calibration)
    c = np.asarray(c, dtype=float)
    if k == 0:
        out = np.where(c > 0, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out
    if calibration is Calibration.ASYMPTOTIC_CHISQ:
        return pc.survival(pc.DistSpec.chi_square(k), c)
    if n <= k:
        raise DimensionError(f"exact F calibration needs n > {k}, got n = {n}")
    return pc.survival(pc.DistSpec.f(k, n - k), (1.0 / k - 1.0 / n) * c)


def mixture_survival(c, w: MixtureWeights, n: int, calibration=Calibration.EXACT_F):
    """``P(T_n > c) = sum_s w_s P(F_{|s|, n-|s|} > (1/|s| - 1/n) c)``."""
    c_arr = np.asarray(c, dtype=float)
    if np.any(c_arr < 0):
        raise ParameterDomainError("critical value must be non-negative")
    total = np.zeros_like(c_arr)
    for k, wk in sorted(w.by_size().items()):
        total = total + wk * component_survival(k, c_arr, n, calibration)
    return float(total) if total.ndim == 0 else total


def lrt_pvalue(t_obs, n: int, p: int, calibration=Calibration.EXACT_F):
    """Least-favorable p-value: half-half mixture of the ``p - 1`` and ``p`` terms.

    Returns 1 at ``t_obs == 0`` (the atom of the null law is included).
    """
    if p < 1:
        raise DimensionError(f"p must be at least 1, got {p}")
    t = np.asarray(t_obs, dtype=float)
    if np.any(t < 0):
        raise ParameterDomainError("statistic must be non-negative")
    tail = 0.5 * component_survival(p, t, n, calibration)
    if p > 1:
        tail = tail + 0.5 * component_survival(p - 1, t, n, calibration)
    out = np.where(t > 0, tail, 1.0)
    return float(out) if out.ndim == 0 else out


def mixture_pvalue_2d(t_obs, rho, n: int, calibration=Calibration.EXACT_F):
    """Vectorized ``p = 2`` mixture p-value with correlation ``rho``.

    ``rho`` is clamped exactly as in :func:`weights_2d`, so ``rho -> -1``
    approaches (but does not reach) the LRT p-value.
    """
    t = np.asarray(t_obs, dtype=float)
    rho = np.clip(np.asarray(rho, dtype=float), -1.0 + RHO_CLAMP, 1.0 - RHO_CLAMP)
    tail = (0.5 * component_survival(1, t, n, calibration)
            + np.arccos(rho) / (2.0 * np.pi) * component_survival(2, t, n, calibration))
    out = np.where(t > 0, tail, 1.0)
    return float(out) if out.ndim == 0 else out


def _bracket_root(fn, alpha: float) -> float:
    lo, hi = 0.0, 1.0
    while fn(hi) > alpha:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ParameterDomainError(f"no critical value brackets alpha = {alpha}")
    return optimize.brentq(lambda c: fn(c) - alpha, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=500)


def lrt_critical(alpha: float, n: int, p: int, calibration=Calibration.EXACT_F) -> float:
    """Critical value ``c`` with least-favorable size ``alpha``."""
    if not 0 < alpha < 0.5:
        raise ParameterDomainError(f"alpha must lie in (0, 1/2), got {alpha}")
    return _bracket_root(lambda c: lrt_pvalue(c, n, p, calibration) if c > 0 else 1.0, alpha)


def mixture_critical(alpha: float, w: MixtureWeights, n: int,
                     calibration=Calibration.EXACT_F) -> float:
    """Critical value of the mixture null with given weights (known correlation)."""
    if not 0 < alpha < float(w.weights.sum()):
        raise ParameterDomainError(
            f"alpha must lie in (0, {w.weights.sum():.4f}) for these weights, got {alpha}")
    return _bracket_root(lambda c: mixture_survival(c, w, n, calibration), alpha)


def known_rho_critical(alpha: float, n: int, rho: float,
                       calibration=Calibration.EXACT_F) -> float:
    """``p = 2`` critical value when the correlation is known."""
    return mixture_critical(alpha, weights_2d(rho), n, calibration)


# ---------------------------------------------------------------------------
# Tests
# ---------------------------------------------------------------------------

def monitor_transform(theta_hat, theta_star=None) -> np.ndarray:
    """Map ``H0: theta >= theta_star`` onto ``H0: mu <= 0`` via ``x = -(theta_hat - theta_star)``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_star is None:
        theta_star = np.zeros_like(theta_hat)
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_hat.shape != theta_star.shape:
        raise DimensionError("theta_hat and theta_star differ in length")
    return -(theta_hat - theta_star)


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ParameterDomainError(f"alpha must lie in (0, 1), got {alpha}")


def _marginal_pvalues(x: np.ndarray, cov: CovEstimate, calibration: Calibration) -> tuple[np.ndarray, np.ndarray]:
    """One-sided p-values for each ``H0j: mu_j <= 0``.

    Per-observation ``S`` (divisor n): ``t_j = x_j / sqrt(S_jj / (n - 1))``;
    estimator covariance ``S_n``: ``t_j = x_j / sqrt(S_n,jj)``.
    """
    n = cov.sample_size
    diag = np.diag(cov.matrix.entries)
    if cov.kind is CovKind.PER_OBSERVATION:
        t = x / np.sqrt(diag / (n - 1))
    else:
        t = x / np.sqrt(diag)
    if calibration is Calibration.ASYMPTOTIC_CHISQ:
        p = pc.survival(pc.DistSpec.normal(), t)
    else:
        p = pc.survival(pc.DistSpec.student_t(n - 1), t)
    return t, np.atleast_1d(p)


def _full_quadratic(x: np.ndarray, cov: CovEstimate) -> float:
    q = quad_form(cov.matrix, x)
    return cov.sample_size * q if cov.kind is CovKind.PER_OBSERVATION else q


def lrt_test(x_hat, cov: CovEstimate, alpha: float = 0.05,
             calibration=Calibration.EXACT_F) -> TestOutcome:
    calibration = _calibration(calibration)
    _check_alpha(alpha)
    ts = t_statistic(x_hat, cov)
    pval = lrt_pvalue(ts.t_n, cov.sample_size, cov.dim, calibration)
    return TestOutcome(Method.LRT, ts.t_n, pval, calibration, pval < alpha, alpha,
                       rho_used=-1.0 if cov.dim == 2 else None,
                       details={"r_n": ts.r_n, "mu0": ts.projection.mu0})


def mlr_test(x_hat, cov: CovEstimate, alpha: float = 0.05,
             calibration=Calibration.EXACT_F, *, n_mc: int = DEFAULT_N_MC,
             rng: Optional[pc.RngStream] = None) -> TestOutcome:
    """Modified LRT: mixture null with the estimated correlation plugged in."""
    calibration = _calibration(calibration)
    _check_alpha(alpha)
    ts = t_statistic(x_hat, cov)
    p = cov.dim
    if p == 1:
        w = MixtureWeights(((0,),), np.array([0.5]), 0.5)
    elif p == 2:
        w = weights_2d(ts.rho_hat)
    else:
        w = mixture_weights(SpdMatrix(ts.rho_hat), n_mc, rng)
    pval = 1.0 if ts.t_n <= 0 else mixture_survival(ts.t_n, w, cov.sample_size, calibration)
    pval = float(min(1.0, max(0.0, pval)))
    return TestOutcome(Method.MLR, ts.t_n, pval, calibration, pval < alpha, alpha,
                       rho_used=ts.rho_hat,
                       details={"r_n": ts.r_n, "mu0": ts.projection.mu0, "weights": w})


def pw_regions(x_hat, cov: CovEstimate, alpha: float = 0.05,
               calibration=Calibration.EXACT_F) -> dict[str, bool]:
    """Membership of ``x_hat`` in the regions behind the PW decision.

    ``M1``: full quadratic above the LRT critical value; ``M2``/``M3``:
    marginal t statistics above the one-sided t critical value; ``LRT``:
    the LRT rejection region.  PW rejects on ``(M1 and (M2 or M3)) or LRT``.
    """
    calibration = _calibration(calibration)
    x = np.asarray(x_hat, dtype=float)
    if cov.dim != 2:
        raise UnsupportedDimensionError("the PW test is defined for p = 2 only")
    n = cov.sample_size
    c2 = lrt_critical(alpha, n, 2, calibration)
    if calibration is Calibration.ASYMPTOTIC_CHISQ:
        tcrit = pc.survival_quantile(pc.DistSpec.normal(), alpha)
    else:
        tcrit = pc.survival_quantile(pc.DistSpec.student_t(n - 1), alpha)
    t, _ = _marginal_pvalues(x, cov, calibration)
    t_n = t_statistic(x, cov).t_n
    return {
        "M1": bool(_full_quadratic(x, cov) > c2),
        "M2": bool(t[0] > tcrit),
        "M3": bool(t[1] > tcrit),
        "LRT": bool(t_n > c2),
    }


def pw_test(x_hat, cov: CovEstimate, alpha: float = 0.05,
            calibration=Calibration.EXACT_F) -> TestOutcome:
    """Perlman-Wu test for ``p = 2``.

    p-value ``min(p_LRT, max(p_M1, min(p_t1, p_t2)))``, where ``p_M1`` is the
    least-favorable p-value of the unprojected quadratic, capped at 1 when
    ``T_n = 0``.  ``p < alpha`` exactly when :func:`pw_regions` reports a
    rejection.
    """
    calibration = _calibration(calibration)
    _check_alpha(alpha)
    x = np.asarray(x_hat, dtype=float)
    if cov.dim != 2:
        raise UnsupportedDimensionError("the PW test is defined for p = 2 only")
    n = cov.sample_size
    ts = t_statistic(x, cov)
    full = _full_quadratic(x, cov)
    p_m1 = lrt_pvalue(full, n, 2, calibration)
    t, p_t = _marginal_pvalues(x, cov, calibration)
    p_lrt = lrt_pvalue(ts.t_n, n, 2, calibration)
    pval = float(min(p_lrt, max(p_m1, p_t.min())))
    if ts.t_n <= 0:
        # inside the null cone no level below 1/2 rejects; report the cap like LRT and mLR
        pval = 1.0
    return TestOutcome(Method.PW, ts.t_n, pval, calibration, pval < alpha, alpha,
                       rho_used=ts.rho_hat,
                       details={"full_quadratic": full, "t": t, "p_m1": p_m1,
                                "p_t": p_t, "p_lrt": p_lrt})


def uit_test(x_hat, cov: CovEstimate, alpha: float = 0.05, known_identity: bool = False,
             calibration=Calibration.EXACT_F) -> TestOutcome:
    """Union-intersection test: reject if any coordinate-wise null is rejected.

    With ``known_identity`` the coordinates of the mean are independent with
    variance ``1/n`` and the max statistic has the exact critical value
    ``z_{(1-alpha)^{1/p}} / sqrt(n)``.  Otherwise each coordinate gets a
    one-sided t test and the smallest p-value is Bonferroni-adjusted.
    """
    calibration = _calibration(calibration)
    _check_alpha(alpha)
    x = np.asarray(x_hat, dtype=float)
    p, n = cov.dim, cov.sample_size
    if x.shape != (p,):
        raise DimensionError(f"x has shape {x.shape}, covariance has dimension {p}")
    if known_identity:
        stat = float(x.max())
        crit = uit_identity_critical(alpha, n, p)
        z = np.sqrt(n) * stat
        pval = float(-np.expm1(p * np.log(pc.cdf(pc.DistSpec.normal(), z))))
        details = {"critical": crit}
    else:
        t, p_t = _marginal_pvalues(x, cov, calibration)
        stat = float(t.max())
        pval = float(min(1.0, p * p_t.min()))
        details = {"t": t, "p_t": p_t}
    return TestOutcome(Method.UIT, stat, pval, calibration, pval < alpha, alpha, details=details)


def uit_identity_critical(alpha: float, n: int, p: int) -> float:
    """``z_{(1-alpha)^{1/p}} / sqrt(n)`` for the known-identity max test."""
    level = (1.0 - alpha) ** (1.0 / p)
    return pc.quantile(pc.DistSpec.normal(), level) / np.sqrt(n)


def run_tests(x_hat, cov: CovEstimate, methods: Sequence = (Method.LRT, Method.PW, Method.MLR),
              alpha: float = 0.05, calibration=Calibration.EXACT_F) -> list[TestOutcome]:
    out = []
    for m in methods:
        m = Method(m)
        if m is Method.LRT:
            out.append(lrt_test(x_hat, cov, alpha, calibration))
        elif m is Method.MLR:
            out.append(mlr_test(x_hat, cov, alpha, calibration))
        elif m is Method.PW:
            out.append(pw_test(x_hat, cov, alpha, calibration))
        else:
            out.append(uit_test(x_hat, cov, alpha, calibration=calibration))
    return out
