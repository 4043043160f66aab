"""Cluster bootstrap covariance of DRM functionals.

Whole clusters are resampled with replacement inside each population, so
within-cluster dependence is carried into every replicate.  Replicate ``b``
draws from its own substream ``stream.spawn(b, attempt)``; the result is
therefore the same however the replicates are scheduled.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .drm import ClusteredDataset
from .errors import BootstrapDegenerateError, ConvergenceError, DegenerateMatrixError, ParameterDomainError
from .linalg import CovEstimate, CovKind, SpdMatrix
from .probcore import RngStream

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.10
# exceptions a functional may raise on an unlucky resample; anything else propagates
RECOVERABLE = (ConvergenceError, DegenerateMatrixError, FloatingPointError, np.linalg.LinAlgError)

Functional = Callable[[ClusteredDataset], np.ndarray]


@dataclass(frozen=True)
class BootstrapSpec:
    B: int = 999
    stream: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 2:
            raise ParameterDomainError(f"B must be an integer >= 2, got {self.B}")
        object.__setattr__(self, "B", int(self.B))


@dataclass(frozen=True)
class BootstrapResult:
    replicates: np.ndarray  # (B, k)
    cov: np.ndarray          # (k, k), divisor B - 1
    failures: int            # redrawn replicates


def _replicate(data: ClusteredDataset, functional: Functional, stream: RngStream,
               b: int, max_attempts: int) -> tuple[np.ndarray, int]:
    for attempt in range(max_attempts):
        resample = data.resample_clusters(stream.spawn(b, attempt).generator())
        try:
            value = np.atleast_1d(np.asarray(functional(resample), dtype=float))
        except RECOVERABLE as exc:
            log.debug("replicate %d attempt %d failed: %s", b, attempt, exc)
            continue
        if np.all(np.isfinite(value)):
            return value, attempt
    return None, max_attempts


def cluster_bootstrap(data: ClusteredDataset, functional: Functional,
                      spec: BootstrapSpec = BootstrapSpec(), n_jobs: int = 1) -> BootstrapResult:
    """Replicate the functional ``spec.B`` times; failed replicates are redrawn.

    More than ``MAX_FAILURE_RATE * B`` redraws in total raises
    :class:`BootstrapDegenerateError`.
    """
    base = np.atleast_1d(np.asarray(functional(data), dtype=float))
    budget = int(np.floor(MAX_FAILURE_RATE * spec.B))
    # per-replicate retry cap; the global budget is checked afterwards
    max_attempts = budget + 1

    def job(b):
        return _replicate(data, functional, spec.stream, b, max_attempts)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(job, range(spec.B)))
    else:
        results = [job(b) for b in range(spec.B)]

    failures = sum(r[1] for r in results)
    if failures > budget or any(r[0] is None for r in results):
        raise BootstrapDegenerateError(
            f"{failures} failed replicates out of B={spec.B} exceeds the {MAX_FAILURE_RATE:.0%} limit")
    reps = np.stack([r[0] for r in results])
    if reps.shape[1] != base.size:
        raise BootstrapDegenerateError("functional changed output length across replicates")
    if failures:
        log.info("bootstrap redrew %d failed replicates", failures)
    centered = reps - reps.mean(axis=0)
    cov = centered.T @ centered / (spec.B - 1)
    cov = (cov + cov.T) / 2.0
    return BootstrapResult(replicates=reps, cov=cov, failures=failures)


def cluster_bootstrap_cov(data: ClusteredDataset, functional: Functional,
                          spec: BootstrapSpec = BootstrapSpec(),
                          sample_size: Optional[int] = None, n_jobs: int = 1) -> CovEstimate:
    """Bootstrap covariance ``S*`` of the functional, as an estimator covariance.

    ``sample_size`` is recorded on the estimate for calibration and defaults
    to the total number of clusters.
    """
    res = cluster_bootstrap(data, functional, spec, n_jobs=n_jobs)
    n = sum(data.n_clusters) if sample_size is None else sample_size
    return CovEstimate(SpdMatrix(res.cov), n, CovKind.OF_ESTIMATOR)
