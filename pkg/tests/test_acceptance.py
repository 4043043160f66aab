"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (printed immediately and repeated in
the terminal summary) before asserting, so a failing criterion still reports
what was measured.
"""

import time

import numpy as np

from conftest import ACCEPTANCE_LINES, grid_projection_oracle, random_spd
from onesided import datagen, drm, sim
from onesided.cone import batch_distance_2d, project_nonpositive
from onesided.linalg import CovEstimate, CovKind, SpdMatrix
from onesided.procedures import (Calibration, lrt_test, mixture_survival, mixture_weights, mlr_test,
                                 pw_test, weights_2d)
from onesided.sim import Experiment, SimulationConfig

SEED = 1
ASY = Calibration.ASYMPTOTIC_CHISQ


def record(number: int, checks: list[tuple[str, bool]], elapsed: float) -> bool:
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{name} {'ok' if passed else 'FAILED'}" for name, passed in checks)
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def within(value: float, target: float, tol: float) -> bool:
    return abs(value - target) <= tol


def test_criterion_1_critical_values():
    t0 = time.perf_counter()
    tab = sim.critical_value_table(n=50, p=2, alpha=0.05)
    elapsed = time.perf_counter() - t0
    published = (5.64, 5.37, 4.98, 4.58, 4.12, 3.47)
    checks = [(f"rho={r:g}: {v:.4f} vs {t}", within(v, t, 0.01))
              for r, v, t in zip(tab.rho, tab.values, published)]
    checks.append((f"runtime {elapsed:.3f}s < 1s", elapsed < 1.0))
    assert record(1, checks, elapsed)


def test_criterion_2_data_analysis(mor_main, mor_inflated):
    t0 = time.perf_counter()
    main = {f.__name__: f(*mor_main, calibration=ASY) for f in (lrt_test, mlr_test)}
    infl = {f.__name__: f(*mor_inflated, calibration=ASY) for f in (lrt_test, pw_test, mlr_test)}
    elapsed = time.perf_counter() - t0
    t_main = main["lrt_test"].statistic
    t_infl = infl["lrt_test"].statistic
    p_mlr, p_lrt = main["mlr_test"].p_value, main["lrt_test"].p_value
    checks = [
        (f"T_n {t_main:.4f} vs 59.3", within(t_main, 59.3, 0.1)),
        (f"mLR p {p_mlr:.4g} vs 2.30e-14", within(p_mlr / 2.30e-14, 1.0, 0.10)),
        (f"LRT p {p_lrt:.4g} vs 7.15e-14", within(p_lrt / 7.15e-14, 1.0, 0.10)),
        (f"inflated T_n {t_infl:.4f} vs 3.41", within(t_infl, 3.41, 0.01)),
    ]
    for name, target in (("lrt_test", 0.123), ("pw_test", 0.032), ("mlr_test", 0.053)):
        p = infl[name].p_value
        checks.append((f"inflated {name[:-5].upper()} p {p:.4f} vs {target}", within(p, target, 0.002)))
    checks.append((f"runtime {elapsed:.3f}s < 1s", elapsed < 1.0))
    assert record(2, checks, elapsed)


def test_criterion_3_normal_grid():
    cfg = SimulationConfig(Experiment.MVN_GRID, n_reps=20_000, seed=SEED)
    rep = sim.run_mvn_grid(cfg)
    z = (0.0, 0.0)
    mlr = {rho: rep.rate("mLR", mu=z, rho=rho) for rho in (-0.5, 0.0, 0.5)}
    checks = []
    # the criterion lists 4.98 / 5.05 / 5.00 at rho = -0.5 / 0 / 0.5 while the published
    # table has 5.05 at -0.5 and 4.98 at 0; both assignments are checked
    for label, targets in (("as listed", (4.98, 5.05, 5.00)), ("table columns", (5.05, 4.98, 5.00))):
        for (rho, v), t in zip(mlr.items(), targets):
            checks.append((f"mLR (0,0) rho={rho:g} {v:.2f} vs {t} [{label}]", within(v, t, 0.62)))
    v = rep.rate("LRT", mu=z, rho=0.9)
    checks.append((f"LRT (0,0) rho=.9 {v:.2f} vs 1.66", within(v, 1.66, 0.5)))
    v = rep.rate("PW", mu=z, rho=-0.9)
    checks.append((f"PW (0,0) rho=-.9 {v:.2f} vs 5.46", within(v, 5.46, 0.64)))
    for m, t in (("LRT", 46.8), ("PW", 47.3), ("mLR", 56.3)):
        v = rep.rate(m, mu=(0.2, 0.2), rho=0.0)
        checks.append((f"{m} (.2,.2) rho=0 {v:.2f} vs {t}", within(v, t, 1.5)))
    alt = [c for c in rep.cells if not c.in_null and c.method.value == "LRT"]
    nested = all(rep.rate("LRT", **c.cell) <= rep.rate("PW", **c.cell) for c in alt)
    checks.append((f"LRT <= PW in all {len(alt)} alternative cells", nested))
    assert record(3, checks, rep.wall_clock)


def _drm_report(experiment, setting):
    cfg = SimulationConfig(experiment, setting=setting, n_reps=500, boot_B=199, seed=SEED)
    return sim.run_drm_experiment(cfg)


def test_criterion_4_clustered_monitoring():
    t0 = time.perf_counter()
    reports = {
        "normal I": _drm_report(Experiment.DRM_NORMAL, "I"),
        "gamma II": _drm_report(Experiment.DRM_GAMMA, "II"),
        "gamma III": _drm_report(Experiment.DRM_GAMMA, "III"),
    }
    elapsed = time.perf_counter() - t0
    v = reports["normal I"].rate("mLR", hypothesis="theta_1>=0")
    checks = [(f"normal I theta_1 mLR {v:.2f} in [4.0, 8.5]", 4.0 <= v <= 8.5)]
    for name, rep in reports.items():
        for k in (2, 3):
            h = f"theta_{k}>=0"
            a, b = rep.rate("mLR", hypothesis=h), rep.rate("LRT", hypothesis=h)
            checks.append((f"{name} theta_{k} mLR {a:.1f} > LRT {b:.1f}", a > b))
    for name, rep in reports.items():
        print(f"\n{name}\n{rep.to_text()}")
    assert record(4, checks, elapsed)


def _null_survival_check(rho: float, n_draws: int, n: int = 50) -> list[tuple[str, bool]]:
    root = np.random.default_rng([SEED, int((rho + 1) * 10)])
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    t_all = []
    for _ in range(n_draws // 20_000):
        y = root.standard_normal((20_000, n, 2)) @ chol.T
        x = y.mean(axis=1)
        zc = y - x[:, None, :]
        s = np.einsum("rni,rnj->rij", zc, zc) / n
        t_all.append(n * batch_distance_2d(x, s)[0])
    t_all = np.concatenate(t_all)
    out = []
    w = weights_2d(rho)
    for c in (2.0, 4.0, 6.0, 8.0):
        emp = float(np.mean(t_all > c))
        ana = float(mixture_survival(c, w, n))
        se = np.sqrt(ana * (1 - ana) / len(t_all))
        out.append((f"rho={rho:g} c={c:g}: {emp:.5f} vs {ana:.5f}", abs(emp - ana) <= 4 * se))
    return out


def test_criterion_5_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    checks = []

    # dominance and region nesting on 10,000 random fixtures
    dominance = nesting = True
    for _ in range(10_000):
        x = rng.normal(0.1, 0.4, 2)
        cov = CovEstimate(SpdMatrix(random_spd(rng, 2, 0.05, 3.0)), 50, CovKind.PER_OBSERVATION)
        lrt = lrt_test(x, cov)
        dominance &= mlr_test(x, cov).p_value <= lrt.p_value
        if lrt.reject:
            nesting &= pw_test(x, cov).reject
    checks.append(("mLR p <= LRT p on 10,000 fixtures", dominance))
    checks.append(("LRT reject => PW reject on 10,000 fixtures", nesting))

    # projection against a brute-force grid on 1,000 instances
    worst = 0.0
    feasible = True
    for i in range(1000):
        p = 2 if i < 800 else 3
        x = rng.uniform(-1, 1, p)
        a = random_spd(rng, p)
        exact = project_nonpositive(x, SpdMatrix(a)).distance_sq
        grid = grid_projection_oracle(x, a)
        feasible &= exact <= grid + 1e-12
        worst = max(worst, (grid - exact) / (1 + exact))
    checks.append((f"projection vs grid on 1,000 instances (worst gap {worst:.1e})", feasible and worst <= 1e-8))

    # DRM gradient against central finite differences
    data = drm.ClusteredDataset(tuple(rng.gamma(6 + k, 1.0, (15, 4)) for k in range(3)))
    basis = drm.BasisSpec("quadratic_log")
    beta = rng.normal(0, 0.05, (2, 4))
    g = drm.dual_gradient(beta, data, basis)
    h = 1e-5
    rel = 0.0
    for idx in np.ndindex(beta.shape):
        e = np.zeros_like(beta)
        e[idx] = h
        fd = (drm.dual_loglik(beta + e, data, basis) - drm.dual_loglik(beta - e, data, basis)) / (2 * h)
        rel = max(rel, abs(fd - g[idx]) / max(abs(g[idx]), 1e-300))
    checks.append((f"DRM gradient vs finite differences (max rel {rel:.1e})", rel < 1e-5))

    # mixture weights for p = 2 sum to one exactly
    sums = []
    for r in np.linspace(-0.99, 0.99, 199):
        for w in (weights_2d(r), mixture_weights(SpdMatrix([[1.0, r], [r, 1.0]]))):
            sums.append(abs(w.weights.sum() + w.zero_mass - 1.0))
    checks.append((f"p=2 weights sum to 1 (max error {max(sums):.1e})", max(sums) <= 4e-16))

    # empirical vs analytic null survival at 200,000 draws
    for rho in (-0.9, 0.0, 0.9):
        checks.extend(_null_survival_check(rho, 200_000))

    # published quantile tables
    tables = {
        "normal": (datagen.NORMAL_SETTINGS, {
            "I": ((15.50, 15.50, 14.70, 14.00), (11.66, 11.66, 11.02, 10.32)),
            "II": ((15.50, 15.20, 15.00, 14.70), (11.82, 11.82, 11.82, 11.82)),
            "III": ((15.50, 15.50, 15.50, 15.50), (13.17, 12.93, 12.67, 12.40))}),
        "gamma": (datagen.GAMMA_SETTINGS, {
            "I": ((7.67, 7.67, 6.35, 5.15), (3.98, 3.98, 3.13, 2.38)),
            "II": ((7.67, 7.49, 7.35, 7.11), (3.98, 3.98, 3.98, 3.98)),
            "III": ((7.67, 7.67, 7.67, 7.67), (3.98, 3.78, 3.53, 3.23))}),
    }
    misses = []
    for family, (settings, table) in tables.items():
        for name, (med, q05) in table.items():
            for k in range(4):
                for alpha, target in ((0.5, med[k]), (0.05, q05[k])):
                    v = datagen.scenario_quantile(settings[name], k, alpha)
                    if abs(v - target) > 0.01:
                        misses.append(f"{family} {name} k={k} a={alpha:g}: {v:.4f} vs {target}")
    label = "all 48 quantile-table values within 0.01"
    checks.append((label + (f" (misses: {', '.join(misses)})" if misses else ""), not misses))

    elapsed = time.perf_counter() - t0
    assert record(5, checks, elapsed)
