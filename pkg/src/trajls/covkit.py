"""Covariance functionals and spectral diagnostics for linear dynamics pairs.

For ``x_t = A x_{t-1} + B w_t`` with ``x_0 = 0`` and standard Gaussian ``w_t``
the state covariance is ``Sigma_t = sum_{k<t} A^k B B^T (A^k)^T`` and the
average covariance over a horizon is ``Gamma_t = (1/t) sum_{s<=t} Sigma_s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional, Sequence

import numpy as np

from ._utils import DomainError, as_matrix, loewner_leq, psd_power, symmetrize

DIAG_RESIDUAL_RTOL = 1e-8
DIAG_MAX_COND = 1e10


@dataclass(frozen=True)
class DynamicsPair:
    """Dynamics matrix ``A`` (n x n) and control matrix ``B`` (n x d)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A", square=True)
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = as_matrix(B, "B")
        if B.shape[0] != A.shape[0]:
            raise DomainError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @classmethod
    def identity(cls, n: int) -> "DynamicsPair":
        return cls(np.eye(n), np.eye(n))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DynamicsPair":
        return cls(np.asarray(data["A"], float), np.asarray(data["B"], float))


@dataclass(frozen=True)
class SpectralInfo:
    rho: float
    diagonalizable: bool
    S: Optional[np.ndarray]
    gamma: Optional[float]
    controllability_index: Optional[int]


def state_covariance(dyn: DynamicsPair, t: int) -> np.ndarray:
    """``Sigma_t(A, B)`` via the recursion ``Sigma_t = A Sigma_{t-1} A^T + B B^T``."""
    return state_covariances(dyn, t)[-1]


def state_covariances(dyn: DynamicsPair, T: int) -> np.ndarray:
    """Stack of ``Sigma_1, ..., Sigma_T`` with shape ``(T, n, n)``."""
    if T < 1:
        raise DomainError("t must be >= 1")
    A = dyn.A
    BBt = dyn.B @ dyn.B.T
    out = np.empty((T, dyn.n, dyn.n))
    cur = BBt.copy()
    out[0] = cur
    for s in range(1, T):
        cur = symmetrize(A @ cur @ A.T + BBt)
        out[s] = cur
    return out


def avg_covariance(dyn: DynamicsPair, t: int) -> np.ndarray:
    """``Gamma_t(A, B) = (1/t) sum_{s=1}^t Sigma_s``."""
    return symmetrize(state_covariances(dyn, t).mean(axis=0))


def avg_covariances(dyn: DynamicsPair, T: int) -> np.ndarray:
    """Stack of ``Gamma_1, ..., Gamma_T``."""
    sig = state_covariances(dyn, T)
    return np.cumsum(sig, axis=0) / np.arange(1, T + 1)[:, None, None]


def ulam(M1, M2) -> float:
    """Smallest eigenvalue of ``M2^{-1/2} M1 M2^{-1/2}`` for PD ``M1, M2``."""
    M1 = as_matrix(M1, "M1", square=True)
    M2 = as_matrix(M2, "M2", square=True)
    if M1.shape != M2.shape:
        raise DomainError(f"shape mismatch {M1.shape} vs {M2.shape}")
    psd_power(M1, 1.0, "M1")  # PD check
    W = psd_power(M2, -0.5, "M2")
    return float(np.linalg.eigvalsh(symmetrize(W @ M1 @ W))[0])


def umu_geometric_mean(Psis: Sequence, Gamma, rtol: float = 1e-10) -> float:
    """Geometric mean of ``ulam(Psi_j, Gamma)`` over the blocks.

    Requires the average of the ``Psi_j`` to be dominated by ``Gamma``.
    """
    Psis = [as_matrix(P, "Psi", square=True) for P in Psis]
    if not Psis:
        raise DomainError("need at least one Psi")
    if not loewner_leq(np.mean(Psis, axis=0), Gamma, rtol):
        raise DomainError("average of Psi_j is not dominated by Gamma")
    logs = [np.log(ulam(P, Gamma)) for P in Psis]
    return float(np.exp(np.mean(logs)))


def spectral_radius(A) -> float:
    A = as_matrix(A, "A", square=True)
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def diagonalize(A, rtol: float = DIAG_RESIDUAL_RTOL, max_cond: float = DIAG_MAX_COND):
    """Complex eigendecomposition ``A = S D S^{-1}`` or ``None`` if the test fails.

    Symmetric ``A`` uses an orthogonal eigenbasis, so repeated eigenvalues do
    not produce an arbitrarily skewed basis.
    """
    A = as_matrix(A, "A", square=True)
    normA = np.linalg.norm(A, "fro")
    if np.allclose(A, A.T, rtol=0, atol=1e-14 * max(normA, 1.0)):
        D, S = np.linalg.eigh(symmetrize(A))
        return D.astype(complex), S.astype(complex)
    D, S = np.linalg.eig(A)
    if np.linalg.cond(S) > max_cond:
        return None
    resid = np.linalg.norm(S @ np.diag(D) @ np.linalg.inv(S) - A, "fro")
    if resid > rtol * max(normA, 1e-300):
        return None
    return D, S


def condition_number(dyn: DynamicsPair) -> float:
    """Whitened conditioning ``lmax/lmin`` of ``S^{-1} B B^T S^{-*}``.

    The value depends on the eigenbasis returned by the solver when the
    spectrum has repeated eigenvalues.
    """
    if np.linalg.matrix_rank(dyn.B) < dyn.n:
        raise DomainError("B must have full row rank")
    eig = diagonalize(dyn.A)
    if eig is None:
        raise DomainError("A failed the diagonalizability test")
    _, S = eig
    Sinv_B = np.linalg.solve(S, dyn.B.astype(complex))
    M = Sinv_B @ Sinv_B.conj().T
    evals = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    return float(evals[-1] / evals[0])


def controllability_index(dyn: DynamicsPair) -> Optional[int]:
    """Least ``k`` with ``[B, AB, ..., A^{k-1}B]`` of full row rank, else ``None``."""
    n = dyn.n
    blocks = []
    cur = dyn.B
    for k in range(1, n + 1):
        blocks.append(cur)
        if np.linalg.matrix_rank(np.hstack(blocks)) == n:
            return k
        cur = dyn.A @ cur
    return None


def spectral_info(dyn: DynamicsPair) -> SpectralInfo:
    eig = diagonalize(dyn.A)
    gamma = None
    if eig is not None and np.linalg.matrix_rank(dyn.B) == dyn.n:
        gamma = condition_number(dyn)
    return SpectralInfo(
        rho=spectral_radius(dyn.A),
        diagonalizable=eig is not None,
        S=None if eig is None else eig[1],
        gamma=gamma,
        controllability_index=controllability_index(dyn),
    )


def weighted_sq_norm(M, Sigma) -> float:
    """``Tr(M Sigma M^T)``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    Sigma = as_matrix(Sigma, "Sigma", square=True)
    if M.shape[1] != Sigma.shape[0]:
        raise DomainError(f"incompatible shapes {M.shape} and {Sigma.shape}")
    return float(max(np.einsum("ij,jk,ik->", M, Sigma, M), 0.0))


def jordan_block(r: int, eigenvalue: float = 1.0) -> np.ndarray:
    return eigenvalue * np.eye(r) + np.eye(r, k=1)


def jordan_power(r: int, k: int) -> np.ndarray:
    """``J_r^k`` for the unit-eigenvalue Jordan block: entries ``C(k, j - i)``."""
    out = np.zeros((r, r))
    for off in range(min(r, k + 1)):
        out += comb(k, off) * np.eye(r, k=off)
    return out


def block_jordan(r: int, blocks: int) -> np.ndarray:
    """``BDiag(J_r, blocks)``."""
    return np.kron(np.eye(blocks), jordan_block(r))


def companion(coeffs) -> np.ndarray:
    """Companion matrix of ``a_0 + a_1 z + ... + a_{n-1} z^{n-1} + z^n``.

    Paired with ``B = e_n`` this is the canonical controllable form.
    """
    a = np.asarray(coeffs, dtype=np.float64)
    n = a.size
    C = np.eye(n, k=1)
    C[-1, :] = -a
    return C
