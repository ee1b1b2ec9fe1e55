import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import brentq

from trajls._utils import DomainError, NumericalRefusal
from trajls.covkit import DynamicsPair, avg_covariance, jordan_block
from trajls.generators import CopiesProcess, LDSProcess
from trajls.lowerbound import (
    block_toeplitz_jordan,
    build_theta,
    expected_trace_inverse_mc,
    theta_scan,
    theta_scan_m,
    ulam_scan,
    loglog_slope,
    lower_ones,
    psi,
    s_matrix,
    s_matrix_spectrum,
    solve_stylized,
    trace_inverse,
    tridiagonal_eigenvalues,
)


def iid_process(n):
    return LDSProcess(DynamicsPair(np.zeros((n, n)), np.eye(n)))


# --- trace inverse ---------------------------------------------------------


def test_trace_inverse_deterministic_value():
    X = np.diag([1.0, 2.0])
    assert trace_inverse(X, np.eye(2)) == pytest.approx(1.25)
    assert trace_inverse(X, np.diag([4.0, 4.0])) == pytest.approx(5.0)
    assert trace_inverse(np.ones((3, 2)), np.eye(2)) is None


@pytest.mark.parametrize("n,m,T", [(3, 4, 5), (1, 2, 5)])
def test_wishart_identity(n, m, T):
    q = m * T
    est = expected_trace_inverse_mc(iid_process(n), m, T, np.eye(n), 4000, seed=31)
    assert est.failures == 0 and est.trials == 4000
    assert abs(est.mean - n / (q - n - 1)) <= 4 * est.se


def test_trace_inverse_scales_linearly_in_gamma():
    a = expected_trace_inverse_mc(iid_process(2), 2, 5, np.eye(2), 200, seed=3)
    b = expected_trace_inverse_mc(iid_process(2), 2, 5, 3.0 * np.eye(2), 200, seed=3)
    assert b.mean == pytest.approx(3.0 * a.mean, rel=1e-12)


def test_trace_inverse_refuses_degenerate_designs():
    with pytest.raises(NumericalRefusal):
        expected_trace_inverse_mc(CopiesProcess(np.eye(4)), 2, 5, np.eye(4), 50, seed=1)
    with pytest.raises(DomainError):
        expected_trace_inverse_mc(iid_process(4), 1, 2, np.eye(4), 10, seed=1)


def test_trace_inverse_thread_invariance():
    a = expected_trace_inverse_mc(iid_process(3), 2, 4, np.eye(3), 100, seed=5, threads=1)
    b = expected_trace_inverse_mc(iid_process(3), 2, 4, np.eye(3), 100, seed=5, threads=3)
    np.testing.assert_array_equal(a.values, b.values)


# --- stylized problem ------------------------------------------------------


def test_psi_values():
    assert psi(0.0, np.ones(4)) == 0.0
    assert psi(0.7, np.ones(5)) == pytest.approx(0.7 * 5 / 1.7)
    assert psi(1e12, np.ones(6)) == pytest.approx(6.0, rel=1e-6)
    mu = np.array([0.5, 2.0])
    assert psi(1.3, mu, multiplicities=3) == pytest.approx(psi(1.3, np.repeat(mu, 3)))
    with pytest.raises(DomainError):
        psi(-1.0, np.ones(2))


@pytest.mark.parametrize("q,n", [(10, 3), (50, 5), (200, 20), (7, 6)])
def test_stylized_closed_form(q, n):
    sol = solve_stylized(np.ones(q), n)
    assert sol.ybar == pytest.approx(n / (q - n), rel=1e-9)
    assert sol.sp_value * sol.xbar == pytest.approx(np.sqrt(n), rel=1e-10)
    assert sol.residual <= 1e-9


def test_stylized_scaled_identity():
    c = 4.0
    sol = solve_stylized(np.full(30, 1 / c), 5)
    assert sol.ybar == pytest.approx((5 / 25) / c, rel=1e-9)


def test_stylized_against_brentq():
    rng = np.random.default_rng(0)
    mu = rng.uniform(0.1, 10, size=40)
    sol = solve_stylized(mu, 12)
    oracle = brentq(lambda y: np.sum(y / (mu + y)) - 12, 1e-12, 1e6, xtol=1e-15, rtol=1e-14)
    assert sol.ybar == pytest.approx(oracle, rel=1e-10)


def test_stylized_requires_q_gt_n():
    with pytest.raises(DomainError):
        solve_stylized(np.ones(5), 5)


# --- Theta and S_T ---------------------------------------------------------


def test_theta_small_example():
    th = build_theta(1, 2, 2)
    S2 = np.array([[2.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_allclose(np.linalg.inv(th.theta), 1.5 * S2, atol=1e-12)
    np.testing.assert_allclose(S2, s_matrix(2))


@pytest.mark.parametrize("T,Tp", [(5, 9), (12, 3), (1, 4)])
def test_theta_r1_oracle_and_scaling(T, Tp):
    L = lower_ones(T)
    oracle = 2.0 / (Tp + 1) * L @ L.T
    np.testing.assert_allclose(build_theta(1, T, Tp).theta, oracle, rtol=1e-10)
    scaled = build_theta(1, T, Tp).theta * (Tp + 1) / (T + 1)
    np.testing.assert_allclose(scaled, build_theta(1, T, T).theta, rtol=1e-10)


@pytest.mark.parametrize("r,T,Tp", [(2, 4, 6), (3, 5, 5)])
def test_theta_general_r_oracle(r, T, Tp):
    G = avg_covariance(DynamicsPair(jordan_block(r), np.eye(r)), Tp)
    W = np.real(scipy.linalg.inv(scipy.linalg.sqrtm(G)))
    M = np.kron(np.eye(T), W) @ block_toeplitz_jordan(r, T)
    E = np.zeros((T, T * r))
    E[np.arange(T), np.arange(T) * r] = 1.0
    oracle = E @ M @ M.T @ E.T
    th = build_theta(r, T, Tp).theta
    np.testing.assert_allclose(th, oracle, rtol=1e-8, atol=1e-10)
    assert np.linalg.eigvalsh(th)[0] > 0


def test_s_matrix_identities():
    for T in (1, 2, 9, 30):
        L = lower_ones(T)
        np.testing.assert_allclose(s_matrix(T) @ (L @ L.T), np.eye(T), atol=1e-9)
        np.testing.assert_allclose(s_matrix_spectrum(T), np.linalg.eigvalsh(s_matrix(T)), atol=1e-10)
    T = 17
    tri = 2 * np.eye(T) - np.eye(T, k=1) - np.eye(T, k=-1)
    k = np.arange(1, T + 1)
    np.testing.assert_allclose(tridiagonal_eigenvalues(T), np.sort(2 * (1 - np.cos(k * np.pi / (T + 1)))))
    np.testing.assert_allclose(tridiagonal_eigenvalues(T), np.linalg.eigvalsh(tri), atol=1e-12)


# --- scans -----------------------------------------------------------------


def test_loglog_slope_cases():
    x = np.arange(1, 11, dtype=float)
    assert loglog_slope(x, x**2) == pytest.approx(2.0)
    assert loglog_slope(x, np.full(10, 3.0)) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(1)
    xs = np.linspace(1, 100, 50)
    ys = 3 * xs**1.5 * np.exp(0.01 * rng.standard_normal(50))
    assert loglog_slope(xs, ys) == pytest.approx(1.5, abs=0.05)
    with pytest.raises(DomainError):
        loglog_slope([1, 2], [1, -1])
    with pytest.raises(DomainError):
        loglog_slope([1], [1])


def theta_oracle(n, m):
    T = 2 * n
    L = lower_ones(T)
    lam = np.linalg.eigvalsh(2.0 / (T + 1) * L @ L.T)
    mu = np.repeat(1.0 / lam, m)
    y = brentq(lambda y: np.sum(y / (mu + y)) - n, 1e-14, 1e8, xtol=1e-300, rtol=1e-14)
    return T * y / (2 * m)  # (T d / 2m) / SP with SP = d / y


def test_theta_scan_matches_brentq_oracle():
    scan = theta_scan(1, [16, 32, 64])
    for n, v in scan.rows():
        assert v == pytest.approx(theta_oracle(n, 1), rel=1e-8)
    assert scan.slope == pytest.approx(2.0, abs=0.3)


def test_theta_scan_m_scan_slope():
    scan = theta_scan_m(1, 150, [1, 2, 4, 8, 16, 32])
    oracle = [theta_oracle(150, m) for m in scan.grid]
    np.testing.assert_allclose(scan.values, oracle, rtol=1e-8)
    assert scan.slope == pytest.approx(loglog_slope(scan.grid, oracle), abs=1e-8)
    assert scan.slope == pytest.approx(-3.0, abs=0.3)


def test_theta_scan_single_point_and_divisibility():
    scan = theta_scan(1, [16])
    assert scan.slope is None and len(scan.values) == 1
    with pytest.raises(DomainError):
        theta_scan(3, [16])


def test_ulam_scan_r1_closed_form():
    k = 5
    alphas = [1, 2, 4, 8, 64]
    scan = ulam_scan(1, k, alphas)
    np.testing.assert_allclose(scan.values, [(k * a + 1) / (k + 1) for a in alphas], rtol=1e-10)
    assert scan.values[0] == pytest.approx(1.0)


def test_ulam_scan_r2_slope():
    scan = ulam_scan(2, 5, [2, 4, 8, 16, 32, 64])
    assert scan.slope == pytest.approx(3.0, abs=0.3)
    with pytest.raises(DomainError):
        ulam_scan(2, 5, [0.5])
