from pathlib import Path

import numpy as np
import pytest

from onesided.linalg import CovEstimate, CovKind, SpdMatrix

FIXTURES = Path(__file__).parent / "fixtures"

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mor_main():
    """Published summary of the lumber example: X and S_n."""
    x = np.array([0.69, 1.53])
    cov = CovEstimate(SpdMatrix([[0.01282, 0.01586], [0.01586, 0.04022]]), 806, CovKind.OF_ESTIMATOR)
    return x, cov


@pytest.fixture
def mor_inflated():
    x = np.array([0.166, 0.009])
    cov = CovEstimate(SpdMatrix([[0.0081, 0.0156], [0.0156, 0.0545]]), 806, CovKind.OF_ESTIMATOR)
    return x, cov


def random_spd(rng: np.random.Generator, p: int, lo: float = 0.2, hi: float = 2.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues uniform in ``[lo, hi]``."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = rng.uniform(lo, hi, size=p)
    a = (q * ev) @ q.T
    return (a + a.T) / 2


def grid_projection_oracle(x: np.ndarray, a: np.ndarray, levels: int = 5) -> float:
    """Brute-force ``min (x - mu)^T a^{-1} (x - mu)`` over ``mu <= 0`` by nested grid search.

    The starting box holds every ``mu`` no worse than ``min(x, 0)``; each
    level re-grids a window around the best point at a finer step.
    The window is wide enough for the condition numbers used in the tests,
    and every grid point is feasible, so the result is an upper bound that
    converges to the true minimum.
    """
    x = np.asarray(x, dtype=float)
    p = len(x)
    ainv = np.linalg.inv(a)
    xm = np.minimum(x, 0.0)
    d0 = (x - xm) @ ainv @ (x - xm)
    r = np.sqrt(np.linalg.eigvalsh(a).max() * d0) + 1e-9
    lo = x - r
    hi = np.minimum(0.0, x + r)
    per_axis = 201 if p <= 2 else 41
    # finer zoom in low dimension, more (cheaper) levels in three
    window, shrink = (6, 10) if p <= 2 else (4, 3)
    levels = levels if p <= 2 else 2 * levels

    def search(lo, hi, k):
        axes = [np.linspace(l, h, k) for l, h in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, p)
        res = x - pts
        d = np.einsum("ri,ij,rj->r", res, ainv, res)
        i = int(np.argmin(d))
        step = np.array([(h - l) / (k - 1) if k > 1 else 0.0 for l, h in zip(lo, hi)])
        return float(d[i]), pts[i], step

    best, mu, step = search(lo, hi, per_axis)
    for _ in range(levels):
        lo = mu - window * step
        hi = np.minimum(0.0, mu + window * step)
        k = 2 * window * shrink + 1
        val, mu_new, new_step = search(lo, hi, k)
        if val <= best:
            best, mu = val, mu_new
        step = new_step
    return best
