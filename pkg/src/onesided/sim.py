"""Monte Carlo harness for the critical-value table and the simulation studies.

Three experiments are supported:

``mvn_grid``
    Bivariate normal samples of size ``n`` over a grid of means and
    correlations; each test is applied to the sample mean and the sample
    covariance (divisor ``n``).  The replicate loop is vectorized with the
    batch kernels, which apply exactly the same decision rules as the
    scalar tests in :mod:`.procedures`.
``drm_normal`` / ``drm_gamma``
    Clustered data from a scenario, a DRM fit, cluster-bootstrap covariance
    of the quantile differences, and the tests of ``H0: theta_k >= 0``.

Every replicate draws from a substream addressed by ``(cell, replicate)`` or
``(cell, chunk)``, so reports are reproducible from the seed alone and do not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import probcore as pc
from .bootstrap import BootstrapSpec, cluster_bootstrap
from .cone import batch_distance_2d
from .datagen import GAMMA_SETTINGS, NORMAL_SETTINGS, GammaScenario, NormalScenario, generate, true_theta
from .drm import BasisForm, BasisSpec, ClusteredDataset, fit_drm, quantile_differences
from .errors import ConvergenceError, DataFormatError, DegenerateMatrixError, ParameterDomainError
from .linalg import CovEstimate, CovKind, SpdMatrix
from .procedures import (Calibration, Method, MixtureWeights, known_rho_critical, lrt_critical,
                         lrt_pvalue, mixture_critical, mixture_pvalue_2d, monitor_transform,
                         run_tests)

log = logging.getLogger(__name__)

TABLE2_MU = (
    (0, 0), (0, -.1), (0, -.2), (0, -.3),
    (.1, .1), (.2, .2), (.3, .3), (.4, .4),
    (0, .1), (0, .2), (0, .3), (0, .4),
    (-.1, .1), (-.2, .2), (-.3, .3), (-.4, .4),
)
TABLE2_RHO = (-0.9, -0.5, 0.0, 0.5, 0.9)
TABLE1_RHO = (-1.0, -0.9, -0.5, 0.0, 0.5, 0.9)
LRT_WEIGHTS_2D = MixtureWeights(((0,), (1,), (0, 1)), np.array([0.25, 0.25, 0.5]), 0.0)
DEFAULT_METHODS = (Method.LRT, Method.PW, Method.MLR)
CHUNK = 5000
QUANTILE_LEVELS = (0.05, 0.5)


class Experiment(str, enum.Enum):
    MVN_GRID = "mvn_grid"
    DRM_NORMAL = "drm_normal"
    DRM_GAMMA = "drm_gamma"


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one simulation run.

    ``n_reps`` and ``boot_B`` default to desk scale (20,000 replicates for
    the normal grid, 500 replicates with 199 bootstrap draws for the DRM
    experiments).  For the DRM experiments either a named ``setting``
    (``"I"``, ``"II"``, ``"III"``) or an explicit ``scenario`` is used.
    """

    experiment: Experiment
    methods: tuple[Method, ...] = DEFAULT_METHODS
    alpha: float = 0.05
    n_reps: Optional[int] = None
    seed: int = 0
    calibration: Calibration = Calibration.EXACT_F
    # mvn_grid
    mu_grid: tuple[tuple[float, float], ...] = TABLE2_MU
    rho_grid: tuple[float, ...] = TABLE2_RHO
    n: int = 50
    # drm_*
    setting: Optional[str] = None
    scenario: Union[NormalScenario, GammaScenario, None] = None
    basis: Optional[BasisForm] = None
    boot_B: int = 199
    n_jobs: int = 1

    def __post_init__(self):
        exp = Experiment(self.experiment)
        object.__setattr__(self, "experiment", exp)
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "calibration", Calibration(self.calibration))
        if not 0 < self.alpha < 0.5:
            raise ParameterDomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        n_reps = self.n_reps
        if n_reps is None:
            n_reps = 20_000 if exp is Experiment.MVN_GRID else 500
        if int(n_reps) < 100:
            raise ParameterDomainError(f"n_reps must be at least 100, got {n_reps}")
        object.__setattr__(self, "n_reps", int(n_reps))
        object.__setattr__(self, "seed", int(self.seed))
        if exp is Experiment.MVN_GRID:
            mu = tuple((float(a), float(b)) for a, b in self.mu_grid)
            object.__setattr__(self, "mu_grid", mu)
            object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
            if any(abs(r) >= 1 for r in self.rho_grid):
                raise ParameterDomainError("correlations must lie in (-1, 1)")
            if self.n < 3:
                raise ParameterDomainError("sample size n must be at least 3")
            return
        scen = self.scenario
        if scen is None:
            table = NORMAL_SETTINGS if exp is Experiment.DRM_NORMAL else GAMMA_SETTINGS
            if self.setting not in table:
                raise ParameterDomainError(f"unknown setting {self.setting!r}; use one of {sorted(table)}")
            scen = table[self.setting]
        want = NormalScenario if exp is Experiment.DRM_NORMAL else GammaScenario
        if not isinstance(scen, want):
            raise ParameterDomainError(f"{exp.value} needs a {want.__name__}")
        object.__setattr__(self, "scenario", scen)
        basis = self.basis
        if basis is None:
            basis = BasisForm.QUADRATIC if exp is Experiment.DRM_NORMAL else BasisForm.QUADRATIC_LOG
        object.__setattr__(self, "basis", BasisForm(basis))
        if self.boot_B < 2:
            raise ParameterDomainError("boot_B must be at least 2")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "experiment": self.experiment.value,
            "methods": [m.value for m in self.methods],
            "alpha": self.alpha,
            "n_reps": self.n_reps,
            "seed": self.seed,
            "calibration": self.calibration.value,
            "n_jobs": self.n_jobs,
        }
        if self.experiment is Experiment.MVN_GRID:
            out.update(mu_grid=[list(m) for m in self.mu_grid], rho_grid=list(self.rho_grid), n=self.n)
        else:
            scen = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.scenario).items()}
            out.update(setting=self.setting, scenario=scen, basis=self.basis.value, boot_B=self.boot_B)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SimulationConfig":
        raw = dict(raw)
        try:
            exp = Experiment(raw["experiment"])
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"config needs a valid 'experiment' field: {exc}") from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise DataFormatError(f"unknown config fields: {sorted(unknown)}")
        scen = raw.get("scenario")
        if isinstance(scen, dict):
            kind = NormalScenario if exp is Experiment.DRM_NORMAL else GammaScenario
            raw["scenario"] = kind(**scen)
        if "mu_grid" in raw:
            raw["mu_grid"] = tuple(tuple(m) for m in raw["mu_grid"])
        for key in ("rho_grid", "methods"):
            if key in raw:
                raw[key] = tuple(raw[key])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise DataFormatError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        """Read a JSON config file."""
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise DataFormatError(f"{path}: top level must be an object")
        return cls.from_dict(raw)


@dataclass(frozen=True)
class CellResult:
    cell: dict            # scenario fields identifying the cell
    method: Method
    rejections: int
    n_reps: int
    in_null: bool

    @property
    def rejection_pct(self) -> float:
        return 100.0 * self.rejections / self.n_reps

    @property
    def mc_se(self) -> float:
        p = self.rejections / self.n_reps
        return 100.0 * np.sqrt(p * (1.0 - p) / self.n_reps)


@dataclass
class SimulationReport:
    config: SimulationConfig
    cells: list[CellResult]
    wall_clock: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.seed

    def rate(self, method, **cell) -> float:
        """Rejection percentage of ``method`` in the cell matching ``cell``."""
        return self._find(method, cell).rejection_pct

    def se(self, method, **cell) -> float:
        return self._find(method, cell).mc_se

    def _find(self, method, cell: dict) -> CellResult:
        method = Method(method)
        for c in self.cells:
            if c.method is method and all(_same(c.cell.get(k), v) for k, v in cell.items()):
                return c
        raise KeyError(f"no cell {cell} for {method.value}")

    def to_csv(self) -> str:
        keys = list(self.cells[0].cell) if self.cells else []
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + ["in_null", "method", "rejection_pct", "mc_se", "n_reps"])
        for c in self.cells:
            w.writerow([_fmt_cell(c.cell[k]) for k in keys]
                       + [int(c.in_null), c.method.value, f"{c.rejection_pct:.4f}",
                          f"{c.mc_se:.4f}", c.n_reps])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: one row per mean (or hypothesis), method columns per group."""
        methods = self.config.methods
        if self.config.experiment is Experiment.MVN_GRID:
            group_key, row_key, groups = "rho", "mu", self.config.rho_grid
            rows = self.config.mu_grid
            row_label = lambda r: "(" + ",".join(_short(v) for v in r) + ")"
            group_label = lambda g: f"rho={_short(g)}"
        else:
            group_key, row_key, groups = "setting", "hypothesis", (self.config.setting or "custom",)
            rows = tuple(f"theta_{k}>=0" for k in range(1, self.config.scenario.m + 1))
            row_label = str
            group_label = lambda g: f"Setting {g}"
        width = 7
        head1 = " " * 14 + "".join(f"| {group_label(g):<{width * len(methods) - 1}}" for g in groups)
        head2 = f"{'H0 cell':<14}" + "".join(
            "|" + "".join(f"{m.value:>{width}}" for m in methods) for _ in groups) + "  in H0"
        lines = [head1, head2, "-" * len(head2)]
        for r in rows:
            vals = []
            in_null = None
            for g in groups:
                cells = []
                for m in methods:
                    c = self._find(m, {row_key: r, group_key: g} if group_key != "setting"
                                   else {row_key: r})
                    in_null = c.in_null
                    cells.append(f"{c.rejection_pct:>{width}.2f}")
                vals.append("|" + "".join(cells))
            lines.append(f"{row_label(r):<14}" + "".join(vals) + ("  yes" if in_null else "  no"))
        lines.append("")
        lines.append(f"experiment={self.config.experiment.value} n_reps={self.config.n_reps} "
                     f"seed={self.seed} calibration={self.config.calibration.value} "
                     f"alpha={self.config.alpha} wall_clock={self.wall_clock:.1f}s")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path, Path]:
        """Write ``report.csv``, ``report.txt`` and ``config.json`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = (out / "report.csv", out / "report.txt", out / "config.json")
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.to_text())
        paths[2].write_text(json.dumps(self.config.to_dict(), indent=2) + "\n")
        return paths


def _same(a, b) -> bool:
    if isinstance(a, tuple) or isinstance(b, (tuple, list)):
        return tuple(np.round(a, 12)) == tuple(np.round(b, 12))
    if isinstance(a, float) or isinstance(b, float):
        return a is not None and abs(float(a) - float(b)) < 1e-12
    return a == b


def _short(v: float) -> str:
    s = f"{v:g}"
    return s.replace("0.", ".") if abs(v) < 1 else s


def _fmt_cell(v) -> str:
    if isinstance(v, tuple):
        return " ".join(f"{x:g}" for x in v)
    return f"{v:g}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# Bivariate normal grid
# ---------------------------------------------------------------------------

def batch_decisions(x: np.ndarray, s: np.ndarray, n: int, methods: Sequence[Method],
                    alpha: float, calibration: Calibration) -> dict[Method, np.ndarray]:
    """Rejection indicators for stacks of ``(mean, per-observation covariance)`` pairs.

    ``x`` is ``(R, 2)`` and ``s`` is ``(R, 2, 2)`` with divisor ``n``.  The
    p-values are those of :func:`procedures.run_tests` evaluated row by row.
    """
    dist, full = batch_distance_2d(x, s)
    t_n = n * dist
    out: dict[Method, np.ndarray] = {}
    p_lrt = lrt_pvalue(t_n, n, 2, calibration)
    sd = np.sqrt(np.stack([s[:, 0, 0], s[:, 1, 1]], axis=1) / (n - 1))
    tstat = x / sd
    if calibration is Calibration.ASYMPTOTIC_CHISQ:
        p_t = pc.survival(pc.DistSpec.normal(), tstat)
    else:
        p_t = pc.survival(pc.DistSpec.student_t(n - 1), tstat)
    for m in methods:
        if m is Method.LRT:
            p = p_lrt
        elif m is Method.MLR:
            rho = s[:, 0, 1] / np.sqrt(s[:, 0, 0] * s[:, 1, 1])
            p = np.minimum(1.0, mixture_pvalue_2d(t_n, rho, n, calibration))
        elif m is Method.PW:
            p_m1 = lrt_pvalue(n * full, n, 2, calibration)
            p = np.minimum(p_lrt, np.maximum(p_m1, p_t.min(axis=1)))
        else:
            p = np.minimum(1.0, 2.0 * p_t.min(axis=1))
        out[m] = np.asarray(p) < alpha
    return out


def _mvn_cell(cfg: SimulationConfig, cell_idx: int, mu, rho: float) -> dict[Method, int]:
    n = cfg.n
    root = pc.RngStream(cfg.seed).spawn(cell_idx)
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    counts = {m: 0 for m in cfg.methods}
    done = 0
    chunk = 0
    while done < cfg.n_reps:
        r = min(CHUNK, cfg.n_reps - done)
        gen = root.spawn(chunk).generator()
        y = gen.standard_normal((r, n, 2)) @ chol.T + np.asarray(mu)
        x = y.mean(axis=1)
        z = y - x[:, None, :]
        s = np.einsum("rni,rnj->rij", z, z) / n
        dec = batch_decisions(x, s, n, cfg.methods, cfg.alpha, cfg.calibration)
        for m in cfg.methods:
            counts[m] += int(dec[m].sum())
        done += r
        chunk += 1
    return counts


def _mvn_job(args):
    cfg, idx, mu, rho = args
    return _mvn_cell(cfg, idx, mu, rho)


def run_mvn_grid(cfg: SimulationConfig) -> SimulationReport:
    """Rejection rates of each method over the ``(mu, rho)`` grid."""
    if cfg.experiment is not Experiment.MVN_GRID:
        raise ParameterDomainError("run_mvn_grid needs experiment = mvn_grid")
    t0 = time.perf_counter()
    jobs = [(cfg, i * len(cfg.rho_grid) + j, mu, rho)
            for i, mu in enumerate(cfg.mu_grid) for j, rho in enumerate(cfg.rho_grid)]
    results = _map(_mvn_job, jobs, cfg.n_jobs)
    cells = []
    for (_, _, mu, rho), counts in zip(jobs, results):
        in_null = bool(mu[0] <= 0 and mu[1] <= 0)
        for m in cfg.methods:
            cells.append(CellResult({"mu": mu, "rho": rho}, m, counts[m], cfg.n_reps, in_null))
    return SimulationReport(cfg, cells, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Clustered DRM monitoring experiments
# ---------------------------------------------------------------------------

_REPLICATE_FAILURES = (ConvergenceError, DegenerateMatrixError, np.linalg.LinAlgError)
MAX_REDRAWS = 50


def monitor_statistics(data: ClusteredDataset, basis: BasisSpec, boot: BootstrapSpec,
                       levels: Sequence[float] = QUANTILE_LEVELS):
    """Point estimates ``theta_hat`` (``m x L``) and the bootstrap covariance of their flattening.

    Bootstrap fits are warm-started from the point fit; the optimum does not
    depend on the start, only the iteration count does.
    """
    fit = fit_drm(data, basis)
    theta = quantile_differences(fit, levels)
    beta0 = fit.beta

    def functional(d: ClusteredDataset) -> np.ndarray:
        return quantile_differences(fit_drm(d, basis, init=beta0), levels).ravel()

    res = cluster_bootstrap(data, functional, boot)
    return fit, theta, res


def population_cov(boot_cov: np.ndarray, k: int, n_levels: int, n_clusters: Sequence[int]) -> CovEstimate:
    """Covariance block of ``theta_k`` (``k >= 1``) as an estimator covariance.

    The recorded sample size is ``n_0 + n_k``, the number of clusters behind
    the comparison.
    """
    idx = slice((k - 1) * n_levels, k * n_levels)
    return CovEstimate(SpdMatrix(boot_cov[idx, idx]), n_clusters[0] + n_clusters[k], CovKind.OF_ESTIMATOR)


def _drm_replicate(cfg: SimulationConfig, rep: int) -> tuple[np.ndarray, int]:
    """Rejection indicators, shape ``(m, n_methods)``, plus the number of redraws."""
    root = pc.RngStream(cfg.seed).spawn(rep)
    basis = BasisSpec(cfg.basis)
    m = cfg.scenario.m
    for attempt in range(MAX_REDRAWS):
        stream = root.spawn(attempt)
        data = generate(cfg.scenario, stream.spawn(0))
        try:
            _, theta, res = monitor_statistics(data, basis, BootstrapSpec(cfg.boot_B, stream.spawn(1)))
            rej = np.zeros((m, len(cfg.methods)), dtype=bool)
            for k in range(1, m + 1):
                cov = population_cov(res.cov, k, len(QUANTILE_LEVELS), data.n_clusters)
                x = monitor_transform(theta[k - 1])
                outs = run_tests(x, cov, cfg.methods, cfg.alpha, cfg.calibration)
                rej[k - 1] = [o.reject for o in outs]
            return rej, attempt
        except _REPLICATE_FAILURES as exc:
            log.info("replicate %d attempt %d failed (%s); redrawing", rep, attempt, exc)
    raise ConvergenceError(f"replicate {rep} failed {MAX_REDRAWS} times in a row")


def _drm_job(args):
    cfg, rep = args
    return _drm_replicate(cfg, rep)


def run_drm_experiment(cfg: SimulationConfig) -> SimulationReport:
    """Rejection rates of ``H0: theta_k >= 0`` for each ``k`` and method."""
    if cfg.experiment is Experiment.MVN_GRID:
        raise ParameterDomainError("run_drm_experiment needs a drm_* experiment")
    t0 = time.perf_counter()
    results = _map(_drm_job, [(cfg, r) for r in range(cfg.n_reps)], cfg.n_jobs)
    counts = np.sum([r[0] for r in results], axis=0)
    redraws = int(sum(r[1] for r in results))
    theta = true_theta(cfg.scenario, QUANTILE_LEVELS)
    cells = []
    for k in range(1, cfg.scenario.m + 1):
        in_null = bool(np.all(theta[k - 1] >= -1e-12))
        for j, meth in enumerate(cfg.methods):
            cells.append(CellResult({"setting": cfg.setting or "custom",
                                     "hypothesis": f"theta_{k}>=0"},
                                    meth, int(counts[k - 1, j]), cfg.n_reps, in_null))
    return SimulationReport(cfg, cells, time.perf_counter() - t0, {"redraws": redraws})


def run(cfg: SimulationConfig) -> SimulationReport:
    if cfg.experiment is Experiment.MVN_GRID:
        return run_mvn_grid(cfg)
    return run_drm_experiment(cfg)


def _map(fn, jobs: list, n_jobs: int) -> list:
    """Ordered map; results are reduced in job order whatever the worker count."""
    if n_jobs is None or n_jobs <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(n_jobs) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


# ---------------------------------------------------------------------------
# Critical values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalValueTable:
    n: int
    p: int
    alpha: float
    calibration: Calibration
    rho: tuple[float, ...]
    values: tuple[float, ...]

    def to_text(self) -> str:
        head = "rho   " + "".join(f"{r:>9g}" for r in self.rho)
        row = "c     " + "".join(f"{v:>9.4f}" for v in self.values)
        return (f"critical values, n={self.n}, p={self.p}, alpha={self.alpha:g}, "
                f"{self.calibration.value}\n{head}\n{row}\n")


def critical_value_table(n: int = 50, p: int = 2, rho_list: Sequence[float] = TABLE1_RHO,
                         alpha: float = 0.05, calibration=Calibration.EXACT_F) -> CriticalValueTable:
    """Critical value of ``T_n`` for each known correlation; ``rho = -1`` is the LRT value."""
    calibration = Calibration(calibration)
    if p != 2:
        raise ParameterDomainError("the known-correlation table is defined for p = 2")
    vals = []
    for rho in rho_list:
        if rho <= -1.0 and alpha < 0.5:
            vals.append(lrt_critical(alpha, n, p, calibration))
        elif rho <= -1.0:
            # lrt_critical is restricted to alpha < 1/2; the same least-favorable
            # mixture solved directly covers larger levels
            vals.append(mixture_critical(alpha, LRT_WEIGHTS_2D, n, calibration))
        else:
            vals.append(known_rho_critical(alpha, n, rho, calibration))
    return CriticalValueTable(n, p, alpha, calibration, tuple(float(r) for r in rho_list),
                              tuple(float(v) for v in vals))
