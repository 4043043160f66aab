"""One-sided multi-parameter hypothesis tests with plug-in mixture calibration.

The public surface re-exported here covers the common workflow: build a
covariance estimate, run the tests, and (for quality monitoring) fit a
density ratio model to clustered samples and bootstrap its quantiles.
"""

from .bootstrap import BootstrapSpec, cluster_bootstrap, cluster_bootstrap_cov
from .cone import project_nonpositive, t_statistic
from .datagen import GammaScenario, NormalScenario, gen_gamma, gen_normal, scenario_quantile
from .drm import BasisSpec, ClusteredDataset, DrmFit, fit_drm, quantile_differences
from .errors import (BootstrapDegenerateError, ConvergenceError, DataFormatError,
                     DegenerateMatrixError, DimensionError, OneSidedError, ParameterDomainError,
                     UnsupportedDimensionError)
from .linalg import CovEstimate, CovKind, SpdMatrix
from .probcore import DistSpec, RngStream
from .procedures import (Calibration, Method, TestOutcome, lrt_critical, lrt_pvalue, lrt_test,
                         mixture_weights, mlr_test, monitor_transform, pw_test, run_tests, uit_test)
from .sim import SimulationConfig, SimulationReport, critical_value_table, run_drm_experiment, run_mvn_grid

__version__ = "0.1.0"
