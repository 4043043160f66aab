"""Clustered scenario generators for the DRM monitoring experiments.

Two cluster-dependence mechanisms are provided:

* a normal random-effect model ``y = mu_k + gamma_kj + eps_kjl``;
* a multivariate gamma ``Y = W (U_1, ..., U_d)`` with ``W ~ Gamma(a + b, beta)``
  and ``U_l ~ Beta(a, b)`` iid, whose margins are ``Gamma(a, beta)`` and whose
  within-cluster correlation is ``a / (a + b)``.

Gamma distributions use the rate parametrization throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import probcore as pc
from .drm import ClusteredDataset
from .errors import DimensionError, ParameterDomainError

NORMAL_CLUSTERS = (25, 30, 40, 40)
CLUSTER_SIZE = 5


def _vec(values, name: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ParameterDomainError(f"{name} must be a non-empty finite vector")
    return tuple(float(v) for v in arr)


def _counts(n_clusters, m1: int) -> tuple[int, ...]:
    counts = tuple(int(c) for c in n_clusters)
    if len(counts) != m1:
        raise DimensionError(f"need {m1} cluster counts, got {len(counts)}")
    if any(c < 2 for c in counts):
        raise ParameterDomainError("every population needs at least 2 clusters")
    return counts


@dataclass(frozen=True)
class NormalScenario:
    mu: tuple[float, ...]
    sigma_gamma: tuple[float, ...]
    sigma_e: float
    n_clusters: tuple[int, ...] = NORMAL_CLUSTERS
    d: int = CLUSTER_SIZE

    def __post_init__(self):
        mu = _vec(self.mu, "mu")
        sg = _vec(self.sigma_gamma, "sigma_gamma")
        if len(sg) != len(mu):
            raise DimensionError("mu and sigma_gamma differ in length")
        if min(sg) < 0 or self.sigma_e < 0:
            raise ParameterDomainError("standard deviations must be non-negative")
        if int(self.d) < 1:
            raise ParameterDomainError("cluster size d must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_gamma", sg)
        object.__setattr__(self, "sigma_e", float(self.sigma_e))
        object.__setattr__(self, "n_clusters", _counts(self.n_clusters, len(mu)))
        object.__setattr__(self, "d", int(self.d))

    @property
    def m(self) -> int:
        return len(self.mu) - 1

    def marginal_sd(self, k: int) -> float:
        return float(np.hypot(self.sigma_gamma[k], self.sigma_e))


@dataclass(frozen=True)
class GammaScenario:
    """``b=None`` or ``independent=True`` gives independent ``Gamma(a_k, beta_k)`` units."""

    a: tuple[float, ...]
    beta: tuple[float, ...]
    b: float | None = 14.0
    n_clusters: tuple[int, ...] = NORMAL_CLUSTERS
    d: int = CLUSTER_SIZE
    independent: bool = False

    def __post_init__(self):
        a = _vec(self.a, "a")
        beta = _vec(self.beta, "beta")
        if len(beta) != len(a):
            raise DimensionError("a and beta differ in length")
        if min(a) <= 0 or min(beta) <= 0:
            raise ParameterDomainError("shapes and rates must be positive")
        independent = bool(self.independent) or self.b is None or self.b == np.inf
        if not independent and not (self.b > 0 and np.isfinite(self.b)):
            raise ParameterDomainError("b must be positive")
        if int(self.d) < 1:
            raise ParameterDomainError("cluster size d must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "b", None if independent else float(self.b))
        object.__setattr__(self, "independent", independent)
        object.__setattr__(self, "n_clusters", _counts(self.n_clusters, len(a)))
        object.__setattr__(self, "d", int(self.d))

    @property
    def m(self) -> int:
        return len(self.a) - 1

    def within_cluster_correlation(self, k: int) -> float:
        return 0.0 if self.independent else self.a[k] / (self.a[k] + self.b)


Scenario = Union[NormalScenario, GammaScenario]


# Settings I-III of the simulation study
NORMAL_SETTINGS = {
    "I": NormalScenario(mu=(15.5, 15.5, 14.7, 14.0), sigma_gamma=(1.2, 1.2, 1.0, 1.0), sigma_e=2.0),
    "II": NormalScenario(mu=(15.5, 15.2, 15.0, 14.7), sigma_gamma=(2.0, 1.794, 1.653, 1.436),
                         sigma_e=1.0),
    "III": NormalScenario(mu=(15.5,) * 4, sigma_gamma=(1.0, 1.2, 1.4, 1.6), sigma_e=1.0),
}
GAMMA_SETTINGS = {
    "I": GammaScenario(a=(8, 8, 7, 6), beta=(1, 1, 1.05, 1.10)),
    "II": GammaScenario(a=(8, 8.5, 9, 10), beta=(1, 1.09, 1.18, 1.36)),
    "III": GammaScenario(a=(8, 7, 6, 5), beta=(1, 0.87, 0.74, 0.61)),
}


def _stream_gen(r) -> np.random.Generator:
    return r.generator() if isinstance(r, pc.RngStream) else pc.as_generator(r)


def gen_normal(s: NormalScenario, r) -> ClusteredDataset:
    """Random-effect clusters: one ``gamma_kj`` shared by the ``d`` units of a cluster."""
    gen = _stream_gen(r)
    pops = []
    for k, n_k in enumerate(s.n_clusters):
        gam = gen.standard_normal((n_k, 1)) * s.sigma_gamma[k]
        eps = gen.standard_normal((n_k, s.d)) * s.sigma_e
        pops.append(s.mu[k] + gam + eps)
    return ClusteredDataset(tuple(pops))


def gen_gamma(s: GammaScenario, r) -> ClusteredDataset:
    """Multivariate gamma clusters ``W * U`` (independent units when ``b`` is infinite)."""
    gen = _stream_gen(r)
    pops = []
    for k, n_k in enumerate(s.n_clusters):
        a, rate = s.a[k], s.beta[k]
        if s.independent:
            y = pc.sample(pc.DistSpec.gamma(a, rate), gen, (n_k, s.d))
        else:
            w = pc.sample(pc.DistSpec.gamma(a + s.b, rate), gen, (n_k, 1))
            u = pc.sample(pc.DistSpec.beta(a, s.b), gen, (n_k, s.d))
            y = w * u
        pops.append(np.asarray(y, dtype=float))
    return ClusteredDataset(tuple(pops))


def generate(s: Scenario, r) -> ClusteredDataset:
    return gen_normal(s, r) if isinstance(s, NormalScenario) else gen_gamma(s, r)


def scenario_quantile(model: Scenario, k: int, alpha: float) -> float:
    """Marginal ``alpha`` quantile of population ``k``."""
    if not 0 < alpha < 1:
        raise ParameterDomainError("alpha must lie in (0, 1)")
    if not 0 <= k <= model.m:
        raise DimensionError(f"population {k} outside 0..{model.m}")
    if isinstance(model, NormalScenario):
        if alpha == 0.5:
            return model.mu[k]
        return float(pc.quantile(pc.DistSpec.normal(model.mu[k], model.marginal_sd(k)), alpha))
    return float(pc.quantile(pc.DistSpec.gamma(model.a[k], model.beta[k]), alpha))


def true_theta(model: Scenario, levels=(0.05, 0.5)) -> np.ndarray:
    """Population quantile differences ``xi_{k,a} - xi_{0,a}``, shape ``(m, len(levels))``."""
    return np.array([[scenario_quantile(model, k, a) - scenario_quantile(model, 0, a)
                      for a in levels] for k in range(1, model.m + 1)])
