"""Shared plumbing: seeded substreams, array validation, PSD matrix powers."""

from __future__ import annotations

import zlib
from typing import Sequence, Union

import numpy as np

SeedKey = Union[int, Sequence[int]]

_PSD_CLIP = 1e-12


class DomainError(ValueError):
    """Raised when an input violates a mathematical precondition."""


class NumericalRefusal(RuntimeError):
    """Raised when a computation is refused for rank or conditioning reasons."""


def role_id(name: str) -> int:
    """Stable 32-bit integer for a named stream role."""
    return zlib.crc32(name.encode("utf-8"))


def value_id(value) -> int:
    """Stable integer key for a grid value (int or float)."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    return zlib.crc32(repr(float(value)).encode("ascii"))


def _split_key(seed: SeedKey) -> tuple[int, tuple[int, ...]]:
    if isinstance(seed, (int, np.integer)):
        return int(seed), ()
    seed = tuple(int(s) for s in seed)
    if not seed:
        raise ValueError("empty seed key")
    return seed[0], seed[1:]


def child_key(seed: SeedKey, *parts: int) -> tuple[int, ...]:
    root, path = _split_key(seed)
    return (root, *path, *(int(p) for p in parts))


def substream(seed: SeedKey, *parts: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *parts)``.

    Distinct key paths give statistically independent streams, and a stream
    depends only on its key, never on how many other streams were created.
    """
    root, path = _split_key(seed)
    if root < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=root, spawn_key=(*path, *(int(p) for p in parts)))
    return np.random.Generator(np.random.Philox(ss))


def as_matrix(M, name: str = "matrix", square: bool = False) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise DomainError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if square and M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} has non-finite entries")
    return M


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def check_psd(M, name: str = "matrix", rtol: float = 1e-10) -> np.ndarray:
    M = symmetrize(as_matrix(M, name, square=True))
    evals = np.linalg.eigvalsh(M)
    scale = max(float(np.max(np.abs(evals))), 1e-300)
    if evals[0] < -rtol * scale:
        raise DomainError(f"{name} is not PSD (min eigenvalue {evals[0]:.3e})")
    return M


def psd_power(M, power: float, name: str = "matrix", require_pd: bool = True) -> np.ndarray:
    """Symmetric matrix power via eigendecomposition.

    Eigenvalues below ``max(eig) * 1e-12`` raise ``DomainError`` when
    ``require_pd`` (claimed-PD input); otherwise they are clipped to zero,
    which only makes sense for nonnegative powers.
    """
    M = symmetrize(as_matrix(M, name, square=True))
    evals, evecs = np.linalg.eigh(M)
    top = float(evals[-1]) if evals.size else 0.0
    thresh = max(top, 0.0) * _PSD_CLIP
    if require_pd:
        if top <= 0 or evals[0] <= thresh:
            raise DomainError(f"{name} is not positive definite (min eigenvalue {evals[0]:.3e})")
    else:
        if power < 0:
            raise ValueError("negative powers need a positive definite matrix")
        evals = np.where(evals > thresh, evals, 0.0)
    return (evecs * evals**power) @ evecs.T


def psd_sqrt(M, name: str = "matrix") -> np.ndarray:
    """Square root of a possibly rank-deficient PSD matrix (clipped eigenvalues)."""
    return psd_power(check_psd(M, name), 0.5, name, require_pd=False)


def loewner_leq(M1, M2, rtol: float = 1e-10) -> bool:
    """``M1 <= M2`` in Loewner order up to ``rtol * tr(M2)``."""
    diff = symmetrize(np.asarray(M2, float) - np.asarray(M1, float))
    tol = rtol * max(abs(float(np.trace(M2))), 1e-300)
    return bool(np.linalg.eigvalsh(diff)[0] >= -tol)


def mean_and_se(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan")
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def parallel_map(fn, items, threads: int = 1) -> list:
    """Ordered map over ``items``; results never depend on ``threads``."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, items))
