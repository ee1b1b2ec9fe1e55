"""Empirical (falsification-style) certification of trajectory small-ball constants.

For direction ``v`` and block ``j`` (steps ``(j-1)k+1 .. jk``) the certified
quantity is the probability that the block energy
``(1/k) sum_t <v, x_t>^2`` falls below ``eps * v^T Psi_j v``. Block 1 is
estimated unconditionally; later blocks are re-simulated from frozen
prefixes and the worst prefix is reported, a finite surrogate for the
almost-sure conditional statement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import beta as beta_dist
from sklearn.base import BaseEstimator

from ._utils import (
    DomainError,
    NumericalRefusal,
    SeedKey,
    as_matrix,
    child_key,
    loewner_leq,
    parallel_map,
    role_id,
    substream,
)
from .covkit import ulam
from .generators import Process, estimate_gamma

DIRECTIONS = role_id("directions")
BLOCK = role_id("block")
PREFIX = role_id("prefix")
INNER = role_id("inner")

ALPHA_GRID = tuple(sorted({1.0 / (2 * D) for D in range(1, 9)} | {0.25, 1.0 / 3.0, 0.5, 1.0}))
CP_LEVEL = 0.95


class CertificationRefused(NumericalRefusal):
    """The process/Psi combination cannot be certified (see message)."""


def clopper_pearson(successes, trials, level: float = CP_LEVEL):
    """Exact two-sided binomial interval, vectorized."""
    k = np.asarray(successes, dtype=np.float64)
    n = np.asarray(trials, dtype=np.float64)
    a = 1.0 - level
    lo = np.where(k > 0, beta_dist.ppf(a / 2, k, n - k + 1), 0.0)
    hi = np.where(k < n, beta_dist.ppf(1 - a / 2, k + 1, n - k), 1.0)
    return lo, hi


def binomial_se(p, trials):
    p = np.asarray(p, dtype=np.float64)
    return np.sqrt(np.clip(p * (1 - p), 0, None) / trials)


def _normalize_psis(Psis, S: int, n: int) -> list[np.ndarray]:
    arr = np.asarray(Psis, dtype=np.float64) if not isinstance(Psis, (list, tuple)) else None
    if arr is not None and arr.ndim == 2:
        Psis = [arr] * S
    Psis = [as_matrix(P, "Psi", square=True) for P in Psis]
    if len(Psis) != S:
        raise DomainError(f"need floor(T/k) = {S} Psi matrices, got {len(Psis)}")
    for P in Psis:
        if P.shape[0] != n:
            raise DomainError(f"Psi must be {n} x {n}")
        if np.linalg.eigvalsh(0.5 * (P + P.T))[0] <= 0:
            raise DomainError("every Psi_j must be positive definite")
    return Psis


def _reference_gamma(process: Process, T: int, Gamma_T, trials: int, seed: SeedKey):
    if Gamma_T is not None:
        return as_matrix(Gamma_T, "Gamma_T", square=True), 1e-8
    G = process.analytic_gamma(T)
    if G is not None:
        return G, 1e-8
    est = estimate_gamma(process, T, max(trials, 200), seed)
    return est.mean, 0.05


def _check_dominance(Psis, Gamma, rtol):
    avg = np.mean(Psis, axis=0)
    if not loewner_leq(avg, Gamma, rtol):
        gap = float(np.linalg.eigvalsh(0.5 * ((Gamma - avg) + (Gamma - avg).T))[0])
        raise CertificationRefused(
            f"average Psi is not dominated by Gamma_T (min eigenvalue of the gap {gap:.3e})"
        )


def _directions(n: int, n_directions: int, Psis, seed: SeedKey) -> np.ndarray:
    rng = substream(seed, DIRECTIONS)
    dirs = []
    if n_directions:
        z = rng.standard_normal((n_directions, n))
        dirs.append(z / np.linalg.norm(z, axis=1, keepdims=True))
    seen = set()
    for P in Psis:
        key = P.tobytes()
        if key in seen:
            continue
        seen.add(key)
        dirs.append(np.linalg.eigh(0.5 * (P + P.T))[1].T)
    return np.concatenate(dirs) if dirs else np.zeros((0, n))


def _block_energies(x: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``(1/k) sum_t <v, x_t>^2`` for x of shape (..., k, n); returns (..., n_dirs)."""
    proj = x @ V.T
    return np.mean(proj**2, axis=-2)


def _step_energies(x: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``<v, x_t>^2`` per step, shape (..., k, n_dirs)."""
    return (x @ V.T) ** 2


def _simulate_block(process, j, k, n_trials, n_prefix, n_inner, seed, threads):
    """Samples of block ``j`` (1-based).

    Returns an array of shape (n_groups, n_samples, k, n): one group for
    block 1, one group per frozen prefix otherwise.
    """
    bseed = child_key(seed, BLOCK, j)
    if j == 1:
        def one(i):
            return process.extend(substream(bseed, i), None, k)[0]

        xs = parallel_map(one, range(n_trials), threads)
        return np.stack(xs)[None]

    def group(g):
        _, state = process.extend(substream(bseed, PREFIX, g), None, (j - 1) * k)
        return np.stack([process.extend(substream(bseed, INNER, g, i), state, k)[0] for i in range(n_inner)])

    return np.stack(parallel_map(group, range(n_prefix), threads))


@dataclass
class SmallBallCertificate:
    T: int
    k: int
    Psis: list
    eps_grid: np.ndarray
    directions: np.ndarray
    exceedance: np.ndarray  # (n_eps, n_dirs, n_blocks): worst group per cell
    trials_per_cell: np.ndarray  # (n_blocks,)
    cp_upper: np.ndarray  # Clopper-Pearson upper bound per cell
    fitted_csb: Optional[float]
    fitted_alpha: Optional[float]
    descriptor: dict = field(default_factory=dict)
    alpha_fits: dict = field(default_factory=dict)

    def envelope(self, eps=None) -> np.ndarray:
        eps = self.eps_grid if eps is None else np.asarray(eps, float)
        return np.minimum((self.fitted_csb * eps) ** self.fitted_alpha, 1.0)

    def worst_curve(self) -> np.ndarray:
        return self.exceedance.max(axis=(1, 2))

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor,
            "T": self.T,
            "k": self.k,
            "eps_grid": self.eps_grid.tolist(),
            "directions": self.directions.tolist(),
            "exceedance": self.exceedance.tolist(),
            "trials_per_cell": self.trials_per_cell.tolist(),
            "cp_upper": self.cp_upper.tolist(),
            "confidence": CP_LEVEL,
            "fitted_csb": self.fitted_csb,
            "fitted_alpha": self.fitted_alpha,
            "alpha_fits": {repr(a): c for a, c in self.alpha_fits.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def fit_envelope(eps_grid, curve) -> tuple[float, float, dict]:
    """Smallest ``c >= 1`` per grid ``alpha`` with ``curve <= (c eps)^alpha``.

    The returned pair minimises ``c^alpha * log(e c / alpha) / alpha``.
    """
    eps = np.asarray(eps_grid, float)
    curve = np.asarray(curve, float)
    fits = {}
    best = None
    for a in ALPHA_GRID:
        pos = curve > 0
        c = 1.0
        if np.any(pos):
            c = max(1.0, float(np.max(curve[pos] ** (1.0 / a) / eps[pos])))
        fits[a] = c
        score = c**a * np.log(np.e * c / a) / a
        if best is None or score < best[0] - 1e-15:
            best = (score, c, a)
    return best[1], best[2], fits


def certify(
    process: Process,
    T: int,
    k: int,
    Psis,
    eps_grid: Sequence[float],
    n_directions: int,
    n_trials: int,
    seed: SeedKey,
    n_prefix: int = 8,
    n_inner: Optional[int] = None,
    blocks: Optional[Sequence[int]] = None,
    Gamma_T=None,
    threads: int = 1,
) -> SmallBallCertificate:
    """Estimate block small-ball probabilities and fit a ``(c_sb, alpha)`` envelope.

    Raises ``CertificationRefused`` if the average ``Psi`` is not dominated by
    ``Gamma_T`` or if some direction never escapes the small ball at any grid
    scale (no excitation).
    """
    if not 1 <= k <= T:
        raise DomainError("k must lie in 1..T")
    S = T // k
    Psis = _normalize_psis(Psis, S, process.n)
    eps = np.asarray(sorted(eps_grid), dtype=np.float64)
    if eps.size == 0 or np.any(eps <= 0):
        raise DomainError("eps grid must be nonempty and positive")
    Gamma, rtol = _reference_gamma(process, T, Gamma_T, n_trials, seed)
    _check_dominance(Psis, Gamma, rtol)

    V = _directions(process.n, n_directions, Psis, seed)
    blocks = list(range(1, S + 1)) if blocks is None else list(blocks)
    n_inner = n_trials if n_inner is None else n_inner

    exceed = np.zeros((eps.size, V.shape[0], len(blocks)))
    counts = np.zeros(len(blocks), dtype=np.int64)
    for b, j in enumerate(blocks):
        if not 1 <= j <= S:
            raise DomainError(f"block {j} outside 1..{S}")
        xs = _simulate_block(process, j, k, n_trials, n_prefix, n_inner, seed, threads)
        scale = np.einsum("di,ij,dj->d", V, Psis[j - 1], V)
        ratio = _block_energies(xs, V) / scale  # (groups, samples, dirs)
        p = (ratio[None] <= eps[:, None, None, None]).mean(axis=2)  # (eps, groups, dirs)
        exceed[:, :, b] = p.max(axis=1)
        counts[b] = xs.shape[1]

    if np.any(np.all(exceed >= 1.0, axis=0)):
        raise CertificationRefused("no excitation: some direction stays in the small ball at every scale")

    cp_hi = clopper_pearson(np.rint(exceed * counts), np.broadcast_to(counts, exceed.shape))[1]
    csb, alpha, fits = fit_envelope(eps, exceed.max(axis=(1, 2)))
    return SmallBallCertificate(
        T=T,
        k=k,
        Psis=Psis,
        eps_grid=eps,
        directions=V,
        exceedance=exceed,
        trials_per_cell=counts,
        cp_upper=cp_hi,
        fitted_csb=csb,
        fitted_alpha=alpha,
        descriptor=process.descriptor(),
        alpha_fits=fits,
    )


@dataclass
class AvgToBlockReport:
    alpha: float
    beta: float
    eps_grid: np.ndarray
    avg_prob: np.ndarray  # (dirs, blocks): per-step average probability at level alpha
    block_prob: np.ndarray  # (eps, dirs, blocks)
    bound: np.ndarray  # beta / (1 - eps/alpha)
    hypothesis_holds: np.ndarray  # (dirs, blocks)
    margin_se: float  # min over valid cells of (bound - block_prob) / SE
    passed: bool


def check_avg_to_block(
    process: Process,
    T: int,
    k: int,
    Psis,
    alpha: float,
    beta: float,
    trials: int,
    seed: SeedKey,
    eps_grid: Optional[Sequence[float]] = None,
    n_directions: int = 16,
    n_prefix: int = 8,
    blocks: Optional[Sequence[int]] = None,
    threads: int = 1,
) -> AvgToBlockReport:
    """Check that the per-step condition at ``(alpha, beta)`` yields the block
    bound ``beta / (1 - eps/alpha)`` for ``eps < alpha`` on simulated data.

    Cells where the empirical per-step average exceeds ``beta`` do not meet
    the hypothesis and are excluded from the verdict.
    """
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise DomainError("alpha and beta must lie in (0, 1)")
    S = T // k
    Psis = _normalize_psis(Psis, S, process.n)
    eps = np.asarray(eps_grid if eps_grid is not None else alpha * np.array([0.05, 0.1, 0.25, 0.5, 0.75, 0.9]))
    if np.any(eps >= alpha) or np.any(eps <= 0):
        raise DomainError("eps grid must lie in (0, alpha)")
    V = _directions(process.n, n_directions, Psis, seed)
    blocks = list(range(1, S + 1)) if blocks is None else list(blocks)

    avg = np.zeros((V.shape[0], len(blocks)))
    blk = np.zeros((eps.size, V.shape[0], len(blocks)))
    n_samples = np.zeros(len(blocks))
    for b, j in enumerate(blocks):
        xs = _simulate_block(process, j, k, trials, n_prefix, trials, seed, threads)
        scale = np.einsum("di,ij,dj->d", V, Psis[j - 1], V)
        step = _step_energies(xs, V) / scale  # (groups, samples, k, dirs)
        avg_g = (step <= alpha).mean(axis=(1, 2))  # (groups, dirs)
        energy = step.mean(axis=2)  # (groups, samples, dirs)
        blk_g = (energy[None] <= eps[:, None, None, None]).mean(axis=2)  # (eps, groups, dirs)
        avg[:, b] = avg_g.max(axis=0)
        blk[:, :, b] = blk_g.max(axis=1)
        n_samples[b] = xs.shape[1]

    bound = beta / (1.0 - eps / alpha)
    holds = avg <= beta
    se = np.maximum(binomial_se(blk, n_samples), 1.0 / n_samples)
    slack = (bound[:, None, None] - blk) / se
    valid = np.broadcast_to(holds[None], slack.shape)
    margin = float(slack[valid].min()) if np.any(valid) else float("inf")
    return AvgToBlockReport(alpha, beta, eps, avg, blk, bound, holds, margin, bool(margin >= -3.0))


@dataclass
class WeakCertificate:
    alpha: float
    beta: float
    k: int
    Psis: list
    C_S: float
    mu_bar: float
    exceedance: np.ndarray  # (dirs, blocks)
    trials_per_cell: np.ndarray
    cp_upper: np.ndarray
    passed: bool


def growth_constants(Psis, Gamma_lower) -> tuple[float, float]:
    """``C_S = mean(l^2) / mean(l)^2`` and ``mu_bar = mean(l)`` for ``l_j = ulam(Psi_j, Gamma_lower)``."""
    lam = np.array([ulam(P, Gamma_lower) for P in Psis])
    mu_bar = float(lam.mean())
    return float(np.mean(lam**2) / mu_bar**2), mu_bar


def certify_weak(
    process: Process,
    T: int,
    k: int,
    Psis,
    alpha: float,
    beta: float,
    Gamma_lower,
    trials: int,
    seed: SeedKey,
    n_directions: int = 16,
    n_prefix: int = 8,
    blocks: Optional[Sequence[int]] = None,
    Gamma_T=None,
    threads: int = 1,
) -> WeakCertificate:
    """Single-scale check: block probability at ``eps = alpha`` at most ``beta``.

    Passes when every cell satisfies ``p <= beta + 3 SE`` (binomial SE).
    """
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise DomainError("alpha and beta must lie in (0, 1)")
    if not 1 <= k <= T:
        raise DomainError("k must lie in 1..T")
    S = T // k
    Psis = _normalize_psis(Psis, S, process.n)
    Gamma, rtol = _reference_gamma(process, T, Gamma_T, trials, seed)
    Gl = as_matrix(Gamma_lower, "Gamma_lower", square=True)
    _check_dominance(Psis, Gl, 1e-8)
    if not loewner_leq(Gl, Gamma, rtol):
        raise CertificationRefused("Gamma_lower is not dominated by Gamma_T")
    C_S, mu_bar = growth_constants(Psis, Gl)

    V = _directions(process.n, n_directions, Psis, seed)
    blocks = list(range(1, S + 1)) if blocks is None else list(blocks)
    exceed = np.zeros((V.shape[0], len(blocks)))
    counts = np.zeros(len(blocks), dtype=np.int64)
    for b, j in enumerate(blocks):
        xs = _simulate_block(process, j, k, trials, n_prefix, trials, seed, threads)
        scale = np.einsum("di,ij,dj->d", V, Psis[j - 1], V)
        p = (_block_energies(xs, V) / scale <= alpha).mean(axis=1)  # (groups, dirs)
        exceed[:, b] = p.max(axis=0)
        counts[b] = xs.shape[1]
    cp_hi = clopper_pearson(np.rint(exceed * counts), np.broadcast_to(counts, exceed.shape))[1]
    passed = bool(np.all(exceed <= beta + 3 * binomial_se(exceed, counts)))
    return WeakCertificate(alpha, beta, k, Psis, C_S, mu_bar, exceed, counts, cp_hi, passed)


def phi_mixing_window(n: int, beta: float) -> int:
    """``k_mix = inf{k >= 1 : phi_bar(k) <= beta}`` for the normal-subspaces index chain."""
    from .generators import mixing_time_formula

    k = mixing_time_formula(n, beta)
    if k is None:
        raise DomainError("the index chain never mixes to this level")
    return max(1, k)


class SmallBallCertifier(BaseEstimator):
    """Estimator-style wrapper: ``fit(process)`` stores ``certificate_``.

    ``Psi`` may be a matrix, a list of block matrices, or ``"gamma_k"`` to use
    the process's analytic ``Gamma_k``.
    """

    def __init__(
        self,
        T: int = 10,
        k: int = 10,
        Psi="gamma_k",
        eps_grid=tuple(np.logspace(-4, -1, 7)),
        n_directions: int = 16,
        n_trials: int = 2000,
        n_prefix: int = 8,
        seed: int = 0,
        threads: int = 1,
    ):
        self.T = T
        self.k = k
        self.Psi = Psi
        self.eps_grid = eps_grid
        self.n_directions = n_directions
        self.n_trials = n_trials
        self.n_prefix = n_prefix
        self.seed = seed
        self.threads = threads

    def fit(self, process: Process, y=None):
        Psi = self.Psi
        if isinstance(Psi, str):
            if Psi != "gamma_k":
                raise DomainError(f"unknown Psi rule {Psi!r}")
            Psi = process.analytic_gamma(self.k)
            if Psi is None:
                Psi = estimate_gamma(process, self.k, self.n_trials, self.seed).mean
        self.certificate_ = certify(
            process,
            self.T,
            self.k,
            Psi,
            self.eps_grid,
            self.n_directions,
            self.n_trials,
            self.seed,
            n_prefix=self.n_prefix,
            threads=self.threads,
        )
        self.csb_ = self.certificate_.fitted_csb
        self.alpha_ = self.certificate_.fitted_alpha
        return self
