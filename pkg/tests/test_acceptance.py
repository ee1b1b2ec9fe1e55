"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints a single ``criterion N: PASS|FAIL`` line; the lines are
repeated in the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest

from trajls.covkit import DynamicsPair, avg_covariance
from trajls.experiments import ExperimentConfig, lower_vs_ols, rate_scan, risk_ratio_experiment, trace_inverse_table
from trajls.generators import CopiesProcess, LDSProcess, mixing_time_formula
from trajls.lowerbound import theta_scan, ulam_scan, s_matrix_spectrum, solve_stylized
from trajls.smallball import certify

CACHE = {}


def wishart_table(threads):
    dyn = DynamicsPair(np.zeros((5, 5)), np.eye(5))
    return trace_inverse_table(LDSProcess(dyn), 5, 10, np.eye(5), 4000, 20240101, threads=threads)


def risk_ratio_config(threads):
    return ExperimentConfig(kind="risk_ratio", n=5, T=50, trials=300, seed=2024, rho_grid=[0.98, 1.0, 1.02],
                            m_grid=list(range(1, 11)), threads=threads)


def many_traj_config(threads):
    return ExperimentConfig(kind="rate_scan", family="many_traj", n=4, p=1, m=32, T_grid=[8, 16, 32, 64, 128, 256],
                            trials=500, seed=77, noise="gaussian_decoupled", sigma_xi=1.0, threads=threads)


def test_criterion_01_wishart_trace_inverse(report):
    t0 = time.perf_counter()
    table = wishart_table(1)
    CACHE[1] = table.to_csv()
    est = table.rows[0]["mean"]
    exact = 5 / 44
    rel = abs(est / exact - 1)
    ok = rel <= 0.03
    report(1, ok, f"E Tr(X^T X)^-1 = {est:.5f} vs 5/44 = {exact:.5f} (rel err {rel:.4f}, {time.perf_counter() - t0:.1f}s)")
    assert ok


def test_criterion_02_s_matrix_bounds(report):
    worst_lo, worst_hi = np.inf, np.inf
    for T in range(8, 201):
        evals = s_matrix_spectrum(T)  # ascending: lambda_{T-k+1} is evals[k-1]
        k = np.arange(1, T + 1)
        worst_lo = min(worst_lo, float(np.min(evals - 0.02 * k**2 / T**2)))
        worst_hi = min(worst_hi, float(np.min(np.pi**2 * k**2 / T**2 - evals)))
    ok = worst_lo >= 0 and worst_hi >= 0
    report(2, ok, f"min slack lower {worst_lo:.3e}, upper {worst_hi:.3e} over T=8..200")
    assert ok


def test_criterion_03_stylized_closed_form(report):
    errs = []
    for q, n in [(10, 3), (50, 5), (200, 20)]:
        sol = solve_stylized(np.ones(q), n)
        errs.append(abs(sol.xbar * math.sqrt(n) / (n / (q - n)) - 1))
    ok = max(errs) <= 1e-9
    report(3, ok, f"max relative error {max(errs):.2e}")
    assert ok


@pytest.fixture(scope="module")
def risk_ratio_table():
    table = risk_ratio_experiment(risk_ratio_config(1))
    CACHE[4] = table.to_csv()
    return table


def test_criterion_04_risk_ratio_reduced(report, risk_ratio_table):
    rows = {(r["rho"], r["m"]): r for r in risk_ratio_table.rows}
    a = rows[(1.0, 10)]["ci_high"] <= 2.5
    lo, hi = rows[(0.98, 1)], rows[(1.02, 1)]
    b = hi["ratio"] > lo["ratio"] and hi["ci_low"] > lo["ci_high"]
    at10 = [rows[(rho, 10)]["ratio"] for rho in (0.98, 1.0, 1.02)]
    c = max(at10) / min(at10) <= 2.0
    ok = a and b and c
    report(4, ok, f"(a) ratio(1.0,10) CI high {rows[(1.0, 10)]['ci_high']:.3f}; "
                  f"(b) CI(1.02,1)=[{hi['ci_low']:.2f},{hi['ci_high']:.2f}] vs CI(0.98,1)=[{lo['ci_low']:.2f},{lo['ci_high']:.2f}]; "
                  f"(c) spread at m=10 {max(at10) / min(at10):.3f}")
    assert ok


def test_criterion_05_many_trajectory_rate(report):
    table = rate_scan(many_traj_config(1))
    CACHE[5] = table.to_csv()
    slope = table.meta["slope"]
    norm = table.column("normalized")
    ok = abs(slope + 1) <= 0.15 and norm.max() <= 2.0 and norm.min() >= 0.5
    report(5, ok, f"slope {slope:.3f}; risk*mT/(pn) in [{norm.min():.3f}, {norm.max():.3f}]")
    assert ok


def test_criterion_06_theta_scan_slope(report):
    scan = theta_scan(1, [16, 32, 64, 128, 256], m=1)
    ok = abs(scan.slope - 2.0) <= 0.3
    report(6, ok, f"slope {scan.slope:.3f}")
    assert ok


def test_criterion_07_ulam_scan_slopes(report):
    alphas = [2, 4, 8, 16, 32, 64]
    slopes = {r: ulam_scan(r, 5, alphas).slope for r in (1, 2)}
    ok = all(abs(slopes[r] - (2 * r - 1)) <= 0.3 for r in slopes)
    report(7, ok, "slopes " + ", ".join(f"r={r}: {s:.3f}" for r, s in slopes.items()))
    assert ok


def test_criterion_08_lower_bound_dominance(report):
    cfg = ExperimentConfig(kind="lower_vs_ols", n=8, p=1, m_grid=[2], T=32, trials=1000, seed=8,
                           noise="gaussian_decoupled", sigma_xi=1.0, dynamics="identity")
    row = lower_vs_ols(cfg).rows[0]
    ok = row["ols_mean"] >= row["bound_mean"] - 3 * row["combined_se"]
    report(8, ok, f"OLS {row['ols_mean']:.5f} vs bound {row['bound_mean']:.5f} (3 SE = {3 * row['combined_se']:.5f})")
    assert ok


def test_criterion_09_copies_small_ball(report):
    eps = np.logspace(-4, -1, 7)
    N = 20000
    cert = certify(CopiesProcess(np.eye(1)), 4, 4, np.eye(1), eps, 1, N, seed=9)
    worst = cert.worst_curve()
    bound = np.sqrt(np.e * eps)
    tol = bound + 3 * np.sqrt(bound * (1 - bound) / N)
    ok = bool(np.all(worst <= tol))
    report(9, ok, f"max exceedance/bound ratio {np.max(worst / bound):.3f}")
    assert ok


def brute_force_mixing(n, eps, kmax=200):
    P = (np.ones((n, n)) - np.eye(n)) / (n - 1)
    pi = np.full(n, 1 / n)
    Pk = np.eye(n)
    for k in range(kmax):
        tv = max(0.5 * np.abs(Pk[i] - pi).sum() for i in range(n))
        if tv <= eps * (1 + 1e-12):
            return k
        Pk = Pk @ P
    return None


def test_criterion_10_mixing_time(report):
    bad = []
    for n in (3, 5, 8):
        for eps in (0.2, 0.05, 0.01):
            if mixing_time_formula(n, eps) != brute_force_mixing(n, eps):
                bad.append((n, eps))
    ok = not bad
    report(10, ok, f"mismatches {bad}")
    assert ok


def test_criterion_11_thread_determinism(report, risk_ratio_table):
    runs = {
        1: lambda th: wishart_table(th).to_csv(),
        4: lambda th: risk_ratio_experiment(risk_ratio_config(th)).to_csv(),
        5: lambda th: rate_scan(many_traj_config(th)).to_csv(),
    }
    diffs = []
    for crit, fn in runs.items():
        ref = CACHE.get(crit) or fn(1)
        for threads in (4, 8):
            if fn(threads) != ref:
                diffs.append((crit, threads))
    ok = not diffs
    report(11, ok, f"non-identical CSVs: {diffs}")
    assert ok
