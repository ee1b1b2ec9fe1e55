"""Covariate processes, trajectory batches and response labelling.

Every trajectory ``i`` of a batch is drawn from its own Philox substream keyed
by ``(seed, role, i)``, so the data of one trajectory never depends on how
many other trajectories are generated or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ._utils import (
    DomainError,
    SeedKey,
    as_matrix,
    check_psd,
    psd_sqrt,
    role_id,
    substream,
    symmetrize,
)
from .covkit import DynamicsPair, state_covariances

TRAJ = role_id("trajectory")
NOISE = role_id("noise")
GAMMA_MC = role_id("gamma-mc")

_SPHERE_MIN_NORM = 1e-12


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class TrajectoryBatch:
    """``m`` trajectories of ``T`` covariates in ``R^n`` (array ``x`` is m x T x n).

    ``w`` holds the LDS process noise ``w_1..w_{T+1}`` (m x (T+1) x d) when
    retained; ``process`` is the generating process object.
    """

    x: np.ndarray
    descriptor: dict
    seed: SeedKey
    w: Optional[np.ndarray] = None
    process: Optional["Process"] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.x.ndim != 3:
            raise DomainError(f"x must be m x T x n, got shape {self.x.shape}")
        if not np.all(np.isfinite(self.x)):
            raise DomainError("batch has non-finite covariates")

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[2]

    @property
    def X(self) -> np.ndarray:
        """Pooled data matrix, rows ordered by (trajectory, time)."""
        return self.x.reshape(-1, self.n)


@dataclass(frozen=True)
class NoiseModel:
    """``gaussian_decoupled``: iid ``N(0, sigma^2 I_p)`` independent of ``x``.
    ``sysid_coupled``: ``xi_t = B w_{t+1}``, so ``y_t = x_{t+1}`` when ``W_star = A``.
    """

    kind: str = "gaussian_decoupled"

    def __post_init__(self):
        if self.kind not in ("gaussian_decoupled", "sysid_coupled"):
            raise DomainError(f"unknown noise model {self.kind!r}")


@dataclass(frozen=True)
class LabeledBatch:
    batch: TrajectoryBatch
    y: np.ndarray
    W_star: np.ndarray
    noise: NoiseModel
    sigma_xi: float
    xi: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.y.reshape(-1, self.y.shape[-1])

    @property
    def p(self) -> int:
        return self.y.shape[-1]


# ---------------------------------------------------------------------------
# processes


def _sphere(rng: np.random.Generator, size: tuple[int, ...]) -> np.ndarray:
    """Uniform points on the unit sphere along the last axis."""
    z = rng.standard_normal(size)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    while np.any(norms < _SPHERE_MIN_NORM):
        bad = (norms < _SPHERE_MIN_NORM)[..., 0]
        z[bad] = rng.standard_normal((int(bad.sum()), size[-1]))
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norms


class Process:
    """A covariate process ``{x_t}``; subclasses implement :meth:`extend`.

    ``extend(rng, state, steps)`` draws ``steps`` further covariates given the
    hidden state reached so far (``None`` means the start of a trajectory) and
    returns ``(x, new_state)``.
    """

    kind = "process"
    n: int

    def params(self) -> dict:
        return {}

    def descriptor(self) -> dict:
        return {"kind": self.kind, "n": self.n, **self.params()}

    def extend(self, rng: np.random.Generator, state, steps: int):
        raise NotImplementedError

    def sample(self, m: int, T: int, seed: SeedKey) -> TrajectoryBatch:
        _check_mT(m, T)
        x = np.empty((m, T, self.n))
        for i in range(m):
            x[i], _ = self.extend(substream(seed, TRAJ, i), None, T)
        return TrajectoryBatch(x, self.descriptor(), seed, process=self)

    def step_covariances(self, T: int) -> Optional[np.ndarray]:
        """Analytic ``Sigma_1..Sigma_T`` (T x n x n) when the law admits one."""
        return None

    def analytic_gamma(self, T: int) -> Optional[np.ndarray]:
        sig = self.step_covariances(T)
        return None if sig is None else symmetrize(sig.mean(axis=0))

    def analytic_end_covariance(self, T: int) -> Optional[np.ndarray]:
        sig = self.step_covariances(T)
        return None if sig is None else sig[-1]


def _check_mT(m: int, T: int):
    if m < 1 or T < 1:
        raise DomainError("m and T must be >= 1")


class LDSProcess(Process):
    """``x_t = A x_{t-1} + B w_t`` with ``x_0 = 0`` and ``w_t ~ N(0, I_d)``."""

    kind = "lds"

    def __init__(self, dyn: DynamicsPair):
        self.dyn = dyn
        self.n = dyn.n

    def params(self) -> dict:
        return self.dyn.to_dict()

    def extend(self, rng, state, steps):
        A, B = self.dyn.A, self.dyn.B
        cur = np.zeros(self.n) if state is None else np.asarray(state, float)
        w = rng.standard_normal((steps, self.dyn.d))
        out = np.empty((steps, self.n))
        for s in range(steps):
            cur = A @ cur + B @ w[s]
            out[s] = cur
        return out, cur

    def sample(self, m: int, T: int, seed: SeedKey, retain_noise: bool = False) -> TrajectoryBatch:
        _check_mT(m, T)
        A, B = self.dyn.A, self.dyn.B
        # one extra noise step so that sysid labels y_t = x_{t+1} are available
        w = np.stack([substream(seed, TRAJ, i).standard_normal((T + 1, self.dyn.d)) for i in range(m)])
        drive = w @ B.T
        x = np.empty((m, T, self.n))
        cur = np.zeros((m, self.n))
        for t in range(T):
            cur = cur @ A.T + drive[:, t]
            x[:, t] = cur
        return TrajectoryBatch(x, self.descriptor(), seed, w=w if retain_noise else None, process=self)

    def step_covariances(self, T):
        return state_covariances(self.dyn, T)


class IIDGaussianProcess(Process):
    """Independent ``x_t ~ N(0, Sigma_t)``.

    ``Sigmas`` is a callable ``t -> Sigma_t`` (t starting at 1), an array of
    shape (T0, n, n), or a single n x n matrix used at every step.
    """

    kind = "iid_gauss"

    def __init__(self, Sigmas, n: Optional[int] = None, rule: Optional[dict] = None):
        self._rule = rule
        if callable(Sigmas):
            if n is None:
                n = np.atleast_2d(Sigmas(1)).shape[0]
            self._fn = Sigmas
            self._stack = None
        else:
            arr = np.asarray(Sigmas, dtype=np.float64)
            if arr.ndim == 2:
                arr = arr[None]
            self._stack = arr
            self._fn = None
            n = arr.shape[1]
        self.n = int(n)
        self._sqrt_cache: dict[int, np.ndarray] = {}
        self._cov_cache: dict[int, np.ndarray] = {}

    @classmethod
    def doubling(cls, n: int) -> "IIDGaussianProcess":
        """``Sigma_t = 2^t I_n``: independent but exponentially growing steps."""
        return cls(lambda t: (2.0**t) * np.eye(n), n=n, rule={"rule": "doubling"})

    @classmethod
    def lds_marginals(cls, dyn: DynamicsPair) -> "IIDGaussianProcess":
        """Independent draws from the marginals ``N(0, Sigma_t(A, B))`` of an LDS."""
        proc = cls(lambda t: state_covariances(dyn, t)[-1], n=dyn.n, rule={"rule": "lds_marginals", **dyn.to_dict()})
        proc._dyn = dyn
        return proc

    def params(self) -> dict:
        if self._rule is not None:
            return dict(self._rule)
        if self._stack is not None:
            return {"Sigmas": self._stack.tolist()}
        return {"rule": "callable"}

    def cov(self, t: int) -> np.ndarray:
        if t not in self._cov_cache:
            if self._fn is not None:
                S = self._fn(t)
            else:
                if self._stack.shape[0] == 1:
                    S = self._stack[0]
                elif t > self._stack.shape[0]:
                    raise DomainError(f"no covariance given for t={t}")
                else:
                    S = self._stack[t - 1]
            self._cov_cache[t] = as_matrix(S, f"Sigma_{t}", square=True)
        return self._cov_cache[t]

    def _sqrt(self, t: int) -> np.ndarray:
        if t not in self._sqrt_cache:
            self._sqrt_cache[t] = psd_sqrt(self.cov(t), f"Sigma_{t}")
        return self._sqrt_cache[t]

    def _roots(self, t0: int, steps: int) -> np.ndarray:
        if getattr(self, "_dyn", None) is not None and steps > 1:
            sig = state_covariances(self._dyn, t0 + steps)
            for s in range(steps):
                self._cov_cache.setdefault(t0 + s + 1, sig[t0 + s])
        return np.stack([self._sqrt(t0 + s + 1) for s in range(steps)])

    def extend(self, rng, state, steps):
        t0 = 0 if state is None else int(state)
        z = rng.standard_normal((steps, self.n))
        x = np.einsum("tij,tj->ti", self._roots(t0, steps), z)
        return x, t0 + steps

    def sample(self, m, T, seed):
        _check_mT(m, T)
        roots = self._roots(0, T)
        z = np.stack([substream(seed, TRAJ, i).standard_normal((T, self.n)) for i in range(m)])
        x = np.einsum("tij,mtj->mti", roots, z)
        return TrajectoryBatch(x, self.descriptor(), seed, process=self)

    def step_covariances(self, T):
        self._roots(0, T)
        return np.stack([self.cov(t) for t in range(1, T + 1)])


class CopiesProcess(Process):
    """``x_1 ~ N(0, Sigma)`` and ``x_t = x_{t-1}`` afterwards."""

    kind = "copies"

    def __init__(self, Sigma):
        self.Sigma = check_psd(Sigma, "Sigma")
        self.n = self.Sigma.shape[0]
        self._root = psd_sqrt(self.Sigma, "Sigma")

    def params(self):
        return {"Sigma": self.Sigma.tolist()}

    def extend(self, rng, state, steps):
        cur = self._root @ rng.standard_normal(self.n) if state is None else np.asarray(state, float)
        return np.repeat(cur[None], steps, axis=0), cur

    def step_covariances(self, T):
        return np.repeat(self.Sigma[None], T, axis=0)


class GaussianProcess(Process):
    """Jointly Gaussian trajectory with a given (nT0 x nT0) block covariance.

    Block ``(s, t)`` of the covariance is ``E[x_s x_t^T]``.
    """

    kind = "gaussian_process"

    def __init__(self, block_cov, n: int):
        C = check_psd(block_cov, "block covariance")
        if C.shape[0] % n:
            raise DomainError("block covariance size must be a multiple of n")
        self.C = C
        self.n = int(n)
        self.T0 = C.shape[0] // n
        self._roots: dict[int, np.ndarray] = {}

    @classmethod
    def from_lds(cls, dyn: DynamicsPair, T: int) -> "GaussianProcess":
        """Block covariance of an LDS: ``E[x_s x_t^T] = A^{s-t} Sigma_t`` for s >= t."""
        n = dyn.n
        sig = state_covariances(dyn, T)
        C = np.zeros((n * T, n * T))
        for t in range(T):
            P = np.eye(n)
            for s in range(t, T):
                blk = P @ sig[t]
                C[s * n:(s + 1) * n, t * n:(t + 1) * n] = blk
                C[t * n:(t + 1) * n, s * n:(s + 1) * n] = blk.T
                P = dyn.A @ P
        return cls(C, n)

    def params(self):
        return {"block_cov": self.C.tolist()}

    def _root(self, T):
        if T > self.T0:
            raise DomainError(f"block covariance covers only T <= {self.T0}")
        if T not in self._roots:
            k = T * self.n
            self._roots[T] = psd_sqrt(self.C[:k, :k])
        return self._roots[T]

    def extend(self, rng, state, steps):
        prefix = np.zeros(0) if state is None else np.asarray(state, float)
        k0 = prefix.size
        k1 = k0 + steps * self.n
        if k1 > self.C.shape[0]:
            raise DomainError(f"block covariance covers only T <= {self.T0}")
        if k0 == 0:
            flat = self._root(steps) @ rng.standard_normal(k1)
        else:
            C11 = self.C[:k0, :k0]
            C21 = self.C[k0:k1, :k0]
            gain = C21 @ np.linalg.pinv(C11, rcond=1e-12, hermitian=True)
            mean = gain @ prefix
            cond = symmetrize(self.C[k0:k1, k0:k1] - gain @ C21.T)
            evals = np.linalg.eigvalsh(cond)
            cond = cond + max(0.0, -evals[0]) * np.eye(cond.shape[0])
            flat = mean + psd_sqrt(cond) @ rng.standard_normal(k1 - k0)
            flat = np.concatenate([prefix, flat])
        new = flat[k0:]
        return new.reshape(steps, self.n), flat

    def sample(self, m, T, seed):
        _check_mT(m, T)
        root = self._root(T)
        z = np.stack([substream(seed, TRAJ, i).standard_normal(T * self.n) for i in range(m)])
        x = (z @ root.T).reshape(m, T, self.n)
        return TrajectoryBatch(x, self.descriptor(), seed, process=self)

    def step_covariances(self, T):
        n = self.n
        return np.stack([self.C[t * n:(t + 1) * n, t * n:(t + 1) * n] for t in range(T)])


class AlternatingHalfspaces(Process):
    """Uniform on the unit sphere of alternating halves of the coordinates.

    ``i_1 ~ Bern(1/2)`` and ``i_{t+1} = i_t + 1 mod 2``; ``U_0`` spans the first
    ``n/2`` coordinates and ``U_1`` the rest.
    """

    kind = "alternating_halfspaces"

    def __init__(self, n: int):
        if n < 4 or n % 2:
            raise DomainError("n must be even and >= 4")
        self.n = int(n)

    def extend(self, rng, state, steps):
        h = self.n // 2
        i = int(rng.integers(2)) if state is None else 1 - int(state)
        pts = _sphere(rng, (steps, h))
        x = np.zeros((steps, self.n))
        for s in range(steps):
            x[s, i * h:(i + 1) * h] = pts[s]
            last = i
            i = 1 - i
        return x, last

    def step_covariances(self, T):
        return np.repeat(np.eye(self.n)[None] / self.n, T, axis=0)


class NormalSubspaces(Process):
    """Uniform on the unit sphere of ``span{e_j : j != i_t}``.

    The index chain starts uniform and moves to a uniformly chosen different
    index at every step.
    """

    kind = "normal_subspaces"

    def __init__(self, n: int):
        if n < 3:
            raise DomainError("n must be >= 3")
        self.n = int(n)

    def extend(self, rng, state, steps):
        n = self.n
        i = int(rng.integers(n)) if state is None else _next_index(rng, int(state), n)
        pts = _sphere(rng, (steps, n - 1))
        x = np.zeros((steps, n))
        for s in range(steps):
            if s:
                i = _next_index(rng, i, n)
            x[s, :i] = pts[s, :i]
            x[s, i + 1:] = pts[s, i:]
        return x, i

    def step_covariances(self, T):
        return np.repeat(np.eye(self.n)[None] / self.n, T, axis=0)


def _next_index(rng, i, n):
    j = int(rng.integers(n - 1))
    return j + 1 if j >= i else j


class VolterraProcess(Process):
    """Truncated Volterra series driven by a private Gaussian stream per coordinate.

    ``coeffs[l]`` maps index tuples ``(i_1, ..., i_d)`` to coefficients of
    coordinate ``l``; the term contributes ``c * prod_k w_{t - i_k - 1}``.

    In ``mode="degree2"`` every array must be two-index, symmetric and
    traceless, and the sum runs over ``i <= j`` only. A mirrored entry may
    be omitted.
    """

    kind = "volterra"

    def __init__(self, coeffs: Sequence[Mapping[tuple, float]], mode: str = "general", D: Optional[int] = None):
        if mode not in ("general", "degree2"):
            raise DomainError(f"unknown Volterra mode {mode!r}")
        self.mode = mode
        self.n = len(coeffs)
        if self.n < 1:
            raise DomainError("need at least one coordinate")
        terms = []
        for ell, arr in enumerate(coeffs):
            arr = {tuple(int(i) for i in key): float(v) for key, v in arr.items()}
            if any(min(key, default=0) < 0 or not key for key in arr):
                raise DomainError("indices must be nonnegative and nonempty")
            if D is not None and any(len(key) > D for key in arr):
                raise DomainError(f"coordinate {ell} has a term of degree > {D}")
            if mode == "degree2":
                arr = _validate_degree2(arr, ell)
            terms.append(sorted((key, v) for key, v in arr.items() if v != 0.0))
        self.terms = terms
        self.D = max([len(k) for t in terms for k, _ in t], default=1)

    def params(self):
        return {
            "mode": self.mode,
            "coeffs": [{",".join(map(str, k)): v for k, v in t} for t in self.terms],
        }

    def _evaluate(self, w: np.ndarray, t0: int, steps: int) -> np.ndarray:
        # w has shape (t0 + steps, n): w[s] = w_s for s = 0..t0+steps-1
        x = np.zeros((steps, self.n))
        for s in range(steps):
            t = t0 + s + 1
            for ell, terms in enumerate(self.terms):
                acc = 0.0
                for key, c in terms:
                    if max(key) > t - 1:
                        continue
                    prod = c
                    for i in key:
                        prod *= w[t - i - 1, ell]
                    acc += prod
                x[s, ell] = acc
        return x

    def extend(self, rng, state, steps):
        hist = np.zeros((0, self.n)) if state is None else np.asarray(state, float)
        w = np.concatenate([hist, rng.standard_normal((steps, self.n))])
        return self._evaluate(w, hist.shape[0], steps), w


def _validate_degree2(arr: dict, ell: int) -> dict:
    upper = {}
    for (key, v) in arr.items():
        if len(key) != 2:
            raise DomainError(f"coordinate {ell}: degree-2 arrays take index pairs, got {key}")
        i, j = key
        if i == j and v != 0.0:
            raise DomainError(f"coordinate {ell}: array is not traceless at ({i},{i})")
        mirror = arr.get((j, i))
        if mirror is not None and mirror != v:
            raise DomainError(f"coordinate {ell}: array is not symmetric at ({i},{j})")
        if i != j:
            upper[(min(i, j), max(i, j))] = v
    return upper


# ---------------------------------------------------------------------------
# functional entry points


def gen_lds(dyn: DynamicsPair, m: int, T: int, seed: SeedKey, retain_noise: bool = False) -> TrajectoryBatch:
    return LDSProcess(dyn).sample(m, T, seed, retain_noise=retain_noise)


def gen_iid_gauss(Sigmas, m: int, T: int, seed: SeedKey) -> TrajectoryBatch:
    return IIDGaussianProcess(Sigmas).sample(m, T, seed)


def gen_copies(Sigma, m: int, T: int, seed: SeedKey) -> TrajectoryBatch:
    return CopiesProcess(Sigma).sample(m, T, seed)


def gen_gaussian_process(block_cov, n: int, m: int, seed: SeedKey, T: Optional[int] = None) -> TrajectoryBatch:
    proc = GaussianProcess(block_cov, n)
    return proc.sample(m, proc.T0 if T is None else T, seed)


def gen_alternating_halfspaces(n: int, m: int, T: int, seed: SeedKey) -> TrajectoryBatch:
    if T < 2:
        raise DomainError("T must be >= 2")
    return AlternatingHalfspaces(n).sample(m, T, seed)


def gen_normal_subspaces(n: int, m: int, T: int, seed: SeedKey) -> TrajectoryBatch:
    if T < 2:
        raise DomainError("T must be >= 2")
    return NormalSubspaces(n).sample(m, T, seed)


def gen_volterra(coeffs, D: Optional[int], m: int, T: int, seed: SeedKey, mode: str = "general") -> TrajectoryBatch:
    return VolterraProcess(coeffs, mode=mode, D=D).sample(m, T, seed)


def label_batch(
    batch: TrajectoryBatch,
    W_star,
    noise: NoiseModel | str = "gaussian_decoupled",
    sigma_xi: float = 1.0,
    seed: SeedKey = 0,
) -> LabeledBatch:
    """Attach responses ``y_t = W_star x_t + xi_t``."""
    if isinstance(noise, str):
        noise = NoiseModel(noise)
    W = np.atleast_2d(np.asarray(W_star, dtype=np.float64))
    if W.shape[1] != batch.n:
        raise DomainError(f"W_star must have {batch.n} columns, got {W.shape[1]}")
    p = W.shape[0]
    if noise.kind == "sysid_coupled":
        if not isinstance(batch.process, LDSProcess) or batch.w is None:
            raise DomainError("sysid_coupled labels need an LDS batch with retained process noise")
        if p != batch.n:
            raise DomainError("sysid_coupled labels need p = n")
        B = batch.process.dyn.B
        xi = batch.w[:, 1:] @ B.T
        sigma_xi = float(sigma_xi)
    else:
        if sigma_xi < 0:
            raise DomainError("sigma_xi must be nonnegative")
        xi = np.stack([substream(seed, NOISE, i).standard_normal((batch.T, p)) for i in range(batch.m)])
        xi = sigma_xi * xi
    y = batch.x @ W.T + xi
    return LabeledBatch(batch, y, W, noise, float(sigma_xi), xi)


# ---------------------------------------------------------------------------
# Monte Carlo covariance and the index-chain mixing time


@dataclass(frozen=True)
class GammaEstimate:
    mean: np.ndarray
    se: np.ndarray
    trials: int
    min_eig: float

    @property
    def nondegenerate(self) -> bool:
        """Whether the smallest eigenvalue clears the entrywise MC error."""
        return bool(self.min_eig > 3.0 * float(np.max(self.se)) * np.sqrt(self.mean.shape[0]))


def estimate_gamma(process: Process, t: int, trials: int, seed: SeedKey) -> GammaEstimate:
    """Monte Carlo ``Gamma_t(P_x)`` from ``trials`` independent trajectories."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    batch = process.sample(trials, t, (*_as_tuple(seed), GAMMA_MC))
    per = np.einsum("mti,mtj->mij", batch.x, batch.x) / t
    mean = symmetrize(per.mean(axis=0))
    se = per.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.full_like(mean, np.nan)
    return GammaEstimate(mean, symmetrize(se), trials, float(np.linalg.eigvalsh(mean)[0]))


def _as_tuple(seed: SeedKey) -> tuple[int, ...]:
    return (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)


def index_chain_tv(n: int, k: int) -> float:
    """Worst-case TV distance to uniform after ``k`` steps of the index chain.

    Row ``i`` of ``P^k`` is ``1/n + (-1)^k (n-1)^{-k} (e_i - 1/n)``, so the
    distance is ``(n-1)^{-k} (1 - 1/n)`` from any point mass.
    """
    return float((n - 1) ** (-k) * (1 - 1 / n))


def mixing_time_formula(n: int, eps: float) -> Optional[int]:
    """Mixing time of the "jump to a different index" chain on ``n`` states.

    Smallest ``k >= 0`` with ``(n-1)^{-k} (1 - 1/n) <= eps``, evaluated in
    exact rational arithmetic on the decimal value of ``eps``. ``None`` when no
    such ``k`` exists (``n = 2``, ``eps < 1/2``: the chain just alternates).
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    e = Fraction(repr(float(eps)))
    gap = 1 - Fraction(1, n)
    if n == 2:
        return 0 if gap <= e else None
    k = 0
    while gap / (n - 1) ** k > e:
        k += 1
    return k


def index_chain_transition(n: int) -> np.ndarray:
    """Transition matrix ``(11^T - I)/(n-1)`` of the normal-subspaces index chain."""
    return (np.ones((n, n)) - np.eye(n)) / (n - 1)


PROCESS_KINDS: dict[str, Callable[..., Process]] = {
    "lds": lambda **kw: LDSProcess(DynamicsPair.from_dict(kw)),
    "copies": lambda **kw: CopiesProcess(np.asarray(kw["Sigma"])),
    "alternating_halfspaces": lambda **kw: AlternatingHalfspaces(kw["n"]),
    "normal_subspaces": lambda **kw: NormalSubspaces(kw["n"]),
}


def process_from_descriptor(desc: Mapping) -> Process:
    """Rebuild a process from its JSON descriptor."""
    kind = desc.get("kind")
    params = {k: v for k, v in desc.items() if k != "kind"}
    if kind in PROCESS_KINDS:
        return PROCESS_KINDS[kind](**params)
    if kind == "iid_gauss":
        rule = params.get("rule")
        if rule == "doubling":
            return IIDGaussianProcess.doubling(params["n"])
        if rule == "lds_marginals":
            return IIDGaussianProcess.lds_marginals(DynamicsPair.from_dict(params))
        if "Sigmas" in params:
            return IIDGaussianProcess(np.asarray(params["Sigmas"]))
    if kind == "gaussian_process":
        return GaussianProcess(np.asarray(params["block_cov"]), params["n"])
    if kind == "volterra":
        coeffs = [{tuple(int(i) for i in k.split(",")): v for k, v in c.items()} for c in params["coeffs"]]
        return VolterraProcess(coeffs, mode=params.get("mode", "general"))
    raise DomainError(f"cannot rebuild process of kind {kind!r}")


__all__ = [
    "AlternatingHalfspaces",
    "CopiesProcess",
    "GammaEstimate",
    "GaussianProcess",
    "IIDGaussianProcess",
    "LDSProcess",
    "LabeledBatch",
    "NoiseModel",
    "NormalSubspaces",
    "Process",
    "TrajectoryBatch",
    "VolterraProcess",
    "estimate_gamma",
    "gen_alternating_halfspaces",
    "gen_copies",
    "gen_gaussian_process",
    "gen_iid_gauss",
    "gen_lds",
    "gen_normal_subspaces",
    "gen_volterra",
    "index_chain_transition",
    "index_chain_tv",
    "label_batch",
    "mixing_time_formula",
    "process_from_descriptor",
]
