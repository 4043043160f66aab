"""Command-line interface: ``onesided {analyze,monitor,simulate,critvals}``.

Exit codes: 0 success, 2 rejection with ``--exit-on-reject``, 64 usage or
input-format error, 65 unusable covariance matrix, 70 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np

from . import probcore as pc
from .bootstrap import BootstrapSpec
from .drm import BasisForm, BasisSpec, ClusteredDataset
from .errors import (BootstrapDegenerateError, ConvergenceError, DataFormatError,
                     DegenerateMatrixError, DimensionError, ParameterDomainError)
from .linalg import CovEstimate, CovKind, SpdMatrix
from .procedures import Calibration, Method, TestOutcome, monitor_transform, run_tests
from .sim import (QUANTILE_LEVELS, TABLE1_RHO, SimulationConfig, critical_value_table,
                  monitor_statistics, population_cov, run)

EXIT_OK = 0
EXIT_REJECT = 2
EXIT_USAGE = 64
EXIT_BAD_MATRIX = 65
EXIT_NUMERIC = 70

BASIS_FLAGS = {"quad": BasisForm.QUADRATIC, "quadlog": BasisForm.QUADRATIC_LOG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Summary files
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryInput:
    theta_hat: np.ndarray
    cov: np.ndarray
    n: int
    theta_star: np.ndarray

    def cov_estimate(self) -> CovEstimate:
        return CovEstimate(SpdMatrix(self.cov), self.n, CovKind.OF_ESTIMATOR)


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise DataFormatError(f"{what}: {exc}") from exc


def parse_summary(text: str) -> SummaryInput:
    """Parse ``key = value`` lines.

    ``cov`` may be given as one line per row or as a single line with rows
    separated by ``;``.  Blank lines and ``#`` comments are ignored.
    """
    fields: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("theta_hat", "cov", "n", "theta_star"):
            raise DataFormatError(f"line {lineno}: unknown key {key!r}")
        if key != "cov" and key in fields:
            raise DataFormatError(f"line {lineno}: duplicate key {key!r}")
        fields.setdefault(key, []).append(value)
    for key in ("theta_hat", "cov", "n"):
        if key not in fields:
            raise DataFormatError(f"missing key {key!r}")
    theta = np.array(_floats(fields["theta_hat"][0], "theta_hat"))
    rows = [r for v in fields["cov"] for r in v.split(";") if r.strip()]
    cov = [_floats(r, "cov") for r in rows]
    if len({len(r) for r in cov}) != 1:
        raise DataFormatError("cov rows have different lengths")
    cov = np.array(cov)
    try:
        n = int(fields["n"][0])
    except ValueError as exc:
        raise DataFormatError(f"n: {exc}") from exc
    star = (np.array(_floats(fields["theta_star"][0], "theta_star"))
            if "theta_star" in fields else np.zeros_like(theta))
    p = theta.size
    if p == 0 or cov.shape != (p, p) or star.shape != (p,):
        raise DataFormatError(f"dimensions disagree: theta_hat {p}, cov {cov.shape}, theta_star {star.shape}")
    if n < 1:
        raise DataFormatError("n must be positive")
    return SummaryInput(theta, cov, n, star)


def format_summary(s: SummaryInput) -> str:
    """Inverse of :func:`parse_summary`; floats use ``repr`` so values round-trip exactly."""
    vec = lambda v: ", ".join(repr(float(x)) for x in v)
    lines = [f"theta_hat = {vec(s.theta_hat)}"]
    lines += [f"cov = {vec(row)}" for row in s.cov]
    lines += [f"n = {s.n}", f"theta_star = {vec(s.theta_star)}"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Monitoring CSV
# ---------------------------------------------------------------------------

def read_monitor_csv(path) -> ClusteredDataset:
    """Read ``population,cluster,value`` rows into a dataset (populations in file order)."""
    groups: "OrderedDict[str, OrderedDict[int, list[float]]]" = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"population", "cluster", "value"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise DataFormatError(f"{path}: header must contain population, cluster, value")
        for i, row in enumerate(reader, 2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            try:
                cl = int(row["cluster"])
                val = float(row["value"])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{i}: {exc}") from exc
            groups.setdefault(row["population"], OrderedDict()).setdefault(cl, []).append(val)
    if not groups:
        raise DataFormatError(f"{path}: no data rows")
    pops, labels = [], []
    sizes = set()
    for label, clusters in groups.items():
        arr = [v for v in clusters.values()]
        sizes |= {len(v) for v in arr}
        labels.append(label)
        pops.append(arr)
    if len(sizes) != 1:
        raise DataFormatError(f"{path}: all clusters must have the same size, found {sorted(sizes)}")
    return ClusteredDataset(tuple(np.array(p, dtype=float) for p in pops), tuple(labels))


def _reorder(data: ClusteredDataset, baseline: Optional[str]) -> ClusteredDataset:
    if baseline is None:
        return data
    if baseline not in data.labels:
        raise DataFormatError(f"baseline population {baseline!r} not in data {list(data.labels)}")
    i = data.labels.index(baseline)
    order = [i] + [k for k in range(len(data.labels)) if k != i]
    return ClusteredDataset(tuple(data.populations[k] for k in order),
                            tuple(data.labels[k] for k in order))


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _calibration(args) -> Calibration:
    return Calibration.ASYMPTOTIC_CHISQ if args.asymptotic else Calibration.EXACT_F


def _methods(text: str) -> tuple[Method, ...]:
    lookup = {m.value.lower(): m for m in Method}
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok not in lookup:
            raise UsageError(f"unknown method {tok!r}; choose from {', '.join(m.value for m in Method)}")
        out.append(lookup[tok])
    return tuple(out)


def _seed(args, out: TextIO) -> int:
    if args.seed is not None:
        return args.seed
    seed = pc.entropy_seed()
    print(f"seed = {seed}", file=out)
    return seed


def _fmt_p(p: float) -> str:
    return f"{p:.6g}"


def _test_lines(outcomes: Sequence[TestOutcome]) -> list[str]:
    first = outcomes[0]
    lines = []
    stats = [o for o in outcomes if o.method is not Method.UIT]
    if stats:
        lines.append(f"T_n = {stats[0].statistic:.6g}")
    rhos = [o.rho_used for o in outcomes if o.method in (Method.MLR, Method.PW)]
    if rhos and isinstance(rhos[0], float) and np.isfinite(rhos[0]):
        lines.append(f"rho_hat = {rhos[0]:.6g}")
    lines.append(f"calibration = {first.calibration.value}, alpha = {first.alpha:g}")
    for o in outcomes:
        verdict = "reject" if o.reject else "retain"
        lines.append(f"  {o.method.value:<4} p = {_fmt_p(o.p_value):<12} {verdict}")
    return lines


def _emit(lines: list[str], out: TextIO, path: Optional[str]):
    text = "\n".join(lines) + "\n"
    out.write(text)
    if path:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def analyze_summary(summary: SummaryInput, methods, alpha: float, calibration) -> list[TestOutcome]:
    x = monitor_transform(summary.theta_hat, summary.theta_star)
    return run_tests(x, summary.cov_estimate(), methods, alpha, calibration)


def cmd_analyze(args, out: TextIO) -> int:
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from exc
    summary = parse_summary(text)
    outcomes = analyze_summary(summary, args.methods, args.alpha, _calibration(args))
    _emit(_test_lines(outcomes), out, args.out)
    if args.exit_on_reject and any(o.reject for o in outcomes):
        return EXIT_REJECT
    return EXIT_OK


def cmd_monitor(args, out: TextIO) -> int:
    data = _reorder(read_monitor_csv(args.input), args.baseline)
    if data.m < 1:
        raise UsageError("monitoring needs a baseline and at least one further population")
    levels = tuple(_floats(args.levels, "levels"))
    seed = _seed(args, out)
    basis = BasisSpec(BASIS_FLAGS[args.basis])
    boot = BootstrapSpec(args.boot, pc.RngStream(seed))
    fit, theta, res = monitor_statistics(data, basis, boot, levels)
    if res.failures:
        print(f"bootstrap redrew {res.failures} failed replicates", file=out)
    lines = [f"baseline = {data.labels[0]}, basis = {basis.form.value}, B = {args.boot}, seed = {seed}"]
    any_reject = False
    summary_dir = Path(args.summary_dir) if args.summary_dir else None
    if summary_dir:
        summary_dir.mkdir(parents=True, exist_ok=True)
    for k in range(1, data.m + 1):
        cov = population_cov(res.cov, k, len(levels), data.n_clusters)
        summary = SummaryInput(theta[k - 1].copy(), cov.matrix.entries.copy(), cov.sample_size,
                               np.zeros(len(levels)))
        if summary_dir:
            (summary_dir / f"{data.labels[k]}.summary").write_text(format_summary(summary))
        outcomes = analyze_summary(summary, args.methods, args.alpha, _calibration(args))
        any_reject |= any(o.reject for o in outcomes)
        diffs = ", ".join(f"xi_{a:g}: {d:+.6g}" for a, d in zip(levels, theta[k - 1]))
        lines.append("")
        lines.append(f"population {data.labels[k]} vs {data.labels[0]}: {diffs}")
        lines.extend(_test_lines(outcomes))
    _emit(lines, out, args.out)
    if args.exit_on_reject and any_reject:
        return EXIT_REJECT
    return EXIT_OK


def cmd_simulate(args, out: TextIO) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{args.config}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise DataFormatError(f"{args.config}: top level must be an object")
    if args.seed is not None or "seed" not in raw:
        raw["seed"] = _seed(args, out)
    if args.n_reps is not None:
        raw["n_reps"] = args.n_reps
    if args.jobs is not None:
        raw["n_jobs"] = args.jobs
    report = run(SimulationConfig.from_dict(raw))
    out.write(report.to_text())
    if args.out:
        paths = report.write(args.out)
        print("wrote " + ", ".join(str(p) for p in paths), file=out)
    return EXIT_OK


def cmd_critvals(args, out: TextIO) -> int:
    rho = tuple(_floats(args.rho, "rho")) if args.rho else TABLE1_RHO
    table = critical_value_table(args.n, args.p, rho, args.alpha, _calibration(args))
    _emit([table.to_text().rstrip("\n")], out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="onesided", description="One-sided multi-parameter tests and DRM monitoring.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, methods=True):
        p.add_argument("--alpha", type=float, default=0.05)
        if methods:
            p.add_argument("--methods", type=_methods, default=(Method.LRT, Method.PW, Method.MLR),
                           help="comma-separated subset of LRT,PW,mLR,UIT")
        p.add_argument("--asymptotic", action="store_true",
                       help="chi-square (large-sample) calibration instead of exact F")
        p.add_argument("--out", help="also write the report to this path")

    p = sub.add_parser("analyze", help="test H0: theta >= theta_star from a summary file")
    p.add_argument("input")
    common(p)
    p.add_argument("--exit-on-reject", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("monitor", help="DRM fit, cluster bootstrap and tests from raw clustered data")
    p.add_argument("input", help="CSV with columns population, cluster, value")
    common(p)
    p.add_argument("--basis", choices=sorted(BASIS_FLAGS), default="quad")
    p.add_argument("--boot", type=int, default=999, metavar="B")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", default=",".join(str(a) for a in QUANTILE_LEVELS))
    p.add_argument("--baseline", help="label of the baseline population (default: first in file)")
    p.add_argument("--summary-dir", help="write one analyze-compatible summary file per population")
    p.add_argument("--exit-on-reject", action="store_true")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("simulate", help="run a simulation config (JSON)")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-reps", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="directory for report.csv, report.txt and config.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("critvals", help="critical values of T_n for known correlations (p = 2)")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--rho", help="comma-separated correlations (default: -1,-.9,-.5,0,.5,.9)")
    common(p, methods=False)
    p.set_defaults(func=cmd_critvals)
    return parser


def main(argv: Optional[Sequence[str]] = None, out: TextIO = None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, DimensionError, ParameterDomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateMatrixError as exc:
        print(f"bad matrix: {exc}", file=sys.stderr)
        return EXIT_BAD_MATRIX
    except (ConvergenceError, BootstrapDegenerateError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
