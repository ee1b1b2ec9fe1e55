"""Lower-bound numerics: trace-inverse Monte Carlo, the stylized root problem,
whitened Jordan-block grams and the scans built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from ._utils import (
    DomainError,
    NumericalRefusal,
    SeedKey,
    as_matrix,
    child_key,
    mean_and_se,
    parallel_map,
    psd_power,
    role_id,
    symmetrize,
)
from .covkit import DynamicsPair, avg_covariance, jordan_block, jordan_power, ulam
from .generators import Process

TRIAL = role_id("trial")

MAX_FAILURE_FRACTION = 0.01
MAX_THETA_COND = 1e12
BISECT_RTOL = 1e-12
BISECT_CAP = 1e18


# ---------------------------------------------------------------------------
# Monte Carlo expected trace of the inverse gram


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    trials: int
    failures: int = 0
    values: np.ndarray = field(default=None, repr=False, compare=False)


def trace_inverse(X: np.ndarray, Gamma: np.ndarray, rank_rtol: float = 1e-10) -> Optional[float]:
    """``Tr(Gamma^{1/2} (X^T X)^{-1} Gamma^{1/2})`` or ``None`` when X^T X is singular."""
    gram = symmetrize(X.T @ X)
    evals, evecs = np.linalg.eigh(gram)
    if evals[-1] <= 0 or evals[0] <= rank_rtol * evals[-1]:
        return None
    V = evecs.T @ Gamma @ evecs
    return float(np.sum(np.diag(V) / evals))


def expected_trace_inverse_mc(
    process: Process,
    m: int,
    T: int,
    Gamma_Tprime,
    trials: int,
    seed: SeedKey,
    threads: int = 1,
) -> MCEstimate:
    """Monte Carlo estimate of ``E Tr(Gamma^{1/2} (X^T X)^{-1} Gamma^{1/2})``.

    Multiplied by ``sigma_xi^2 p`` this lower-bounds the risk of any estimator
    under decoupled Gaussian noise. Trials whose gram is singular are
    counted; more than 1% of them aborts.
    """
    Gamma = as_matrix(Gamma_Tprime, "Gamma", square=True)
    if m * T < process.n:
        raise DomainError("need m*T >= n")
    if trials < 1:
        raise DomainError("trials must be >= 1")

    def one(j):
        batch = process.sample(m, T, child_key(seed, TRIAL, j))
        return trace_inverse(batch.X, Gamma)

    results = parallel_map(one, range(trials), threads)
    values = np.array([v for v in results if v is not None])
    failures = trials - values.size
    if failures > MAX_FAILURE_FRACTION * trials:
        raise NumericalRefusal(f"{failures} of {trials} trials had a singular gram matrix")
    mean, se = mean_and_se(values)
    return MCEstimate(mean, se, trials, failures, values)


# ---------------------------------------------------------------------------
# stylized problem


@dataclass(frozen=True)
class StylizedSolution:
    xbar: float
    sp_value: float
    residual: float
    iterations: int
    ybar: float  # xbar * sqrt(n), the root of psi(y) = n


def _eig_arrays(inv_sigma_eigs, multiplicities=None):
    mu = np.atleast_1d(np.asarray(inv_sigma_eigs, dtype=np.float64))
    if multiplicities is None:
        mult = np.ones_like(mu)
    else:
        mult = np.broadcast_to(np.asarray(multiplicities, dtype=np.float64), mu.shape)
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise DomainError("inverse-covariance eigenvalues must be positive and finite")
    if np.any(mult < 0):
        raise DomainError("multiplicities must be nonnegative")
    return mu, mult


def psi(y: float, inv_sigma_eigs, multiplicities=None) -> float:
    """``psi(y; Sigma) = y Tr((Sigma^{-1} + y I)^{-1}) = sum_i y / (mu_i + y)``.

    ``inv_sigma_eigs`` are the eigenvalues ``mu_i`` of ``Sigma^{-1}``, optionally
    with multiplicities so that block-repeated spectra never get materialized.
    """
    if y < 0:
        raise DomainError("y must be nonnegative")
    mu, mult = _eig_arrays(inv_sigma_eigs, multiplicities)
    if y == 0:
        return 0.0
    return float(np.sum(mult * (y / (mu + y))))


def solve_stylized(inv_sigma_eigs, n: int, multiplicities=None) -> StylizedSolution:
    """Root ``xbar`` of ``psi(xbar sqrt(n); Sigma) = n`` and ``SP = sqrt(n) / xbar``.

    Bisection on ``y = xbar sqrt(n)`` (``psi`` is increasing with limit ``q``),
    so a root exists exactly when ``q > n``.
    """
    mu, mult = _eig_arrays(inv_sigma_eigs, multiplicities)
    q = float(mult.sum())
    if not q > n:
        raise DomainError(f"no root: need q > n (q={q:g}, n={n})")

    def f(y):
        return float(np.sum(mult * (y / (mu + y)))) - n

    lo, hi = 1e-14, 1.0
    iters = 0
    while f(lo) > 0:
        lo *= 0.5
        iters += 1
        if lo == 0.0:
            raise NumericalRefusal("could not bracket the stylized root from below")
    while f(hi) <= 0:
        lo = max(lo, hi)
        hi *= 2.0
        iters += 1
        if hi > BISECT_CAP:
            raise NumericalRefusal("stylized root exceeds the bracket cap")
    while (hi - lo) > BISECT_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        iters += 1
    y = 0.5 * (lo + hi)
    sqrt_n = float(np.sqrt(n))
    return StylizedSolution(
        xbar=y / sqrt_n,
        sp_value=n / y,
        residual=abs(f(y)),
        iterations=iters,
        ybar=y,
    )


# ---------------------------------------------------------------------------
# whitened Jordan-block grams and S_T


@dataclass(frozen=True)
class ThetaMatrix:
    r: int
    T: int
    Tprime: int
    theta: np.ndarray
    whitening_cond: float


def block_toeplitz_jordan(r: int, T: int) -> np.ndarray:
    """Block lower-triangular Toeplitz matrix with block (t, s) = ``J_r^{t-s}``."""
    powers = [jordan_power(r, k) for k in range(T)]
    out = np.zeros((T * r, T * r))
    for t in range(T):
        for s in range(t + 1):
            out[t * r:(t + 1) * r, s * r:(s + 1) * r] = powers[t - s]
    return out


def build_theta(r: int, T: int, Tprime: int) -> ThetaMatrix:
    """T x T gram of the first coordinate of each whitened Jordan block.

    The trajectory of ``x_t = J_r x_{t-1} + w_t`` is whitened by
    ``Gamma_{T'}(J_r, I_r)^{-1/2}`` and only coordinates ``1, 1+r, ...`` are kept.
    """
    if min(r, T, Tprime) < 1:
        raise DomainError("r, T and Tprime must be >= 1")
    G = avg_covariance(DynamicsPair(jordan_block(r), np.eye(r)), Tprime)
    evals = np.linalg.eigvalsh(G)
    cond = float(evals[-1] / evals[0])
    if cond > MAX_THETA_COND:
        raise NumericalRefusal(f"Gamma_T'(J_{r}) has condition number {cond:.3e}")
    W = psd_power(G, -0.5, "Gamma_T'(J_r)")
    # rows of E * BDiag(W, T) * BToep: first row of W J^{t-s} in block (t, s)
    w0 = W[0]
    rows = np.zeros((T, T * r))
    powers = [w0 @ jordan_power(r, k) for k in range(T)]
    for t in range(T):
        for s in range(t + 1):
            rows[t, s * r:(s + 1) * r] = powers[t - s]
    theta = symmetrize(rows @ rows.T)
    return ThetaMatrix(r, T, Tprime, theta, cond)


def lower_ones(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T)))


def s_matrix(T: int) -> np.ndarray:
    """``S_T = (L_T L_T^T)^{-1} = Tri(2, -1, T) - e_T e_T^T``."""
    S = 2.0 * np.eye(T) - np.eye(T, k=1) - np.eye(T, k=-1)
    S[-1, -1] -= 1.0
    return S


def s_matrix_spectrum(T: int) -> np.ndarray:
    """Ascending eigenvalues of ``S_T`` from a symmetric tridiagonal eigensolve."""
    if T < 1:
        raise DomainError("T must be >= 1")
    diag = np.full(T, 2.0)
    diag[-1] = 1.0
    if T == 1:
        return diag.copy()
    return eigh_tridiagonal(diag, -np.ones(T - 1), eigvals_only=True)


def tridiagonal_eigenvalues(T: int, a: float = 2.0, b: float = -1.0) -> np.ndarray:
    """Closed-form ascending spectrum of ``Tri(a, b, T)``: ``a + 2b cos(k pi/(T+1))``."""
    k = np.arange(1, T + 1)
    return np.sort(a + 2.0 * b * np.cos(k * np.pi / (T + 1)))


# ---------------------------------------------------------------------------
# scans


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise DomainError("need at least two (x, y) pairs")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise DomainError("log-log slope needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


@dataclass
class ScanResult:
    variable: str
    value_name: str
    grid: list
    values: list
    slope: Optional[float]
    meta: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.grid, self.values))


def _slope_or_none(grid, values):
    return loglog_slope(grid, values) if len(grid) >= 2 else None


def theta_sp_quantity(r: int, n: int, m: int, T: int, d: int) -> tuple[float, StylizedSolution]:
    """``(T d / (2m)) / SP(BDiag(Theta_{r,T,T}, m), d)``."""
    theta = build_theta(r, T, T).theta
    lam = np.linalg.eigvalsh(theta)
    if lam[0] <= 0:
        raise NumericalRefusal("Theta is not positive definite")
    sol = solve_stylized(1.0 / lam, d, multiplicities=m)
    return (T * d / (2.0 * m)) / sol.sp_value, sol


def theta_scan(
    r: int,
    n_grid: Sequence[int],
    m: int = 1,
    T_rule: Callable[[int], int] = lambda n: 2 * n,
    d_rule: Optional[Callable[[int], int]] = None,
) -> ScanResult:
    """Stylized lower-bound quantity against the dimension ``n``."""
    if d_rule is None:
        d_rule = lambda n: n // r  # noqa: E731
    values = []
    for n in n_grid:
        if n % r:
            raise DomainError(f"r={r} does not divide n={n}")
        val, _ = theta_sp_quantity(r, n, m, T_rule(n), d_rule(n))
        values.append(val)
    grid = list(n_grid)
    return ScanResult("n", "Td/(2m)/SP", grid, values, _slope_or_none(grid, values), {"r": r, "m": m})


def theta_scan_m(
    r: int,
    n: int,
    m_grid: Sequence[int],
    T_rule: Callable[[int], int] = lambda n: 2 * n,
    d_rule: Optional[Callable[[int], int]] = None,
) -> ScanResult:
    """Same quantity at fixed ``n`` against the number of trajectories ``m``."""
    if n % r:
        raise DomainError(f"r={r} does not divide n={n}")
    d = (n // r) if d_rule is None else d_rule(n)
    T = T_rule(n)
    values = [theta_sp_quantity(r, n, m, T, d)[0] for m in m_grid]
    grid = list(m_grid)
    return ScanResult("m", "Td/(2m)/SP", grid, values, _slope_or_none(grid, values), {"r": r, "n": n})


def ulam_scan(r: int, k: int, alpha_grid: Sequence[int]) -> ScanResult:
    """``1 / ulam(Gamma_k(J_r), Gamma_{k alpha}(J_r))`` against the ratio ``alpha``."""
    dyn = DynamicsPair(jordan_block(r), np.eye(r))
    Gk = avg_covariance(dyn, k)
    values = []
    for a in alpha_grid:
        if a < 1:
            raise DomainError("alpha must be >= 1")
        t = int(round(k * a))
        Gt = avg_covariance(dyn, t)
        ev = np.linalg.eigvalsh(Gt)
        if ev[-1] / ev[0] > MAX_THETA_COND:
            raise NumericalRefusal(f"Gamma_{t}(J_{r}) is too ill-conditioned")
        values.append(1.0 / ulam(Gk, Gt))
    grid = list(alpha_grid)
    return ScanResult("alpha", "1/ulam", grid, values, _slope_or_none(grid, values), {"r": r, "k": k})
