"""Monte Carlo experiment harness: risk ratios, rate scans, lower-bound dominance.

Every (grid cell, trial) pair draws from its own substream keyed by the cell's
grid values, so adding grid points or changing the worker count never changes
the numbers of an existing cell.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._utils import (
    DomainError,
    SeedKey,
    child_key,
    mean_and_se,
    parallel_map,
    role_id,
    substream,
    value_id,
)
from .covkit import DynamicsPair, avg_covariance, block_jordan
from .generators import IIDGaussianProcess, LDSProcess, label_batch
from .lowerbound import loglog_slope, trace_inverse
from .regression import param_error, risk, solve_ols

CELL = role_id("cell")
TRIAL = role_id("trial")
DYNAMICS = role_id("dynamics")
LDS_DATA = role_id("lds-data")
IND_DATA = role_id("ind-data")
LDS_NOISE = role_id("lds-noise")
IND_NOISE = role_id("ind-noise")
BOOTSTRAP = role_id("bootstrap")
WSTAR = role_id("w-star")

KINDS = ("risk_ratio", "rate_scan", "lower_vs_ols")
FAMILIES = ("many_traj", "few_traj", "ind_seq", "param_recovery")
FLAG_FRACTION = 0.05


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "risk_ratio"
    n: int = 5
    p: Optional[int] = None
    T: int = 50
    T_grid: list = field(default_factory=list)
    Tprime: Optional[int] = None
    m: int = 1
    m_grid: list = field(default_factory=lambda: list(range(1, 11)))
    rho_grid: list = field(default_factory=lambda: [0.98, 0.99, 1.0, 1.01, 1.02])
    trials: int = 1000
    seed: int = 0
    noise: str = "sysid_coupled"
    sigma_xi: float = 1.0
    family: str = "many_traj"
    vary: str = "T"
    dynamics: str = "identity"
    jordan_r: int = 1
    regime_c: float = 1.0
    bootstrap: int = 1000
    threads: int = 1
    output: Optional[str] = None
    version: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 1 or self.T < 1:
            raise ConfigError("n and T must be >= 1")
        if self.kind == "risk_ratio" and (not self.m_grid or not self.rho_grid):
            raise ConfigError("m_grid and rho_grid must be nonempty")
        if self.kind == "rate_scan":
            if self.family not in FAMILIES:
                raise ConfigError(f"unknown rate family {self.family!r}")
            if self.vary not in ("T", "m"):
                raise ConfigError("vary must be 'T' or 'm'")
            if not (self.T_grid if self.vary == "T" else self.m_grid):
                raise ConfigError(f"{self.vary}_grid must be nonempty")
        if self.kind == "lower_vs_ols" and self.noise != "gaussian_decoupled":
            raise ConfigError("lower_vs_ols needs gaussian_decoupled noise")
        if self.dynamics not in ("identity", "zero", "jordan"):
            raise ConfigError(f"unknown dynamics {self.dynamics!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in ("threads", "output")}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ResultTable:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, stream=None) -> str:
        out = io.StringIO()
        for key in sorted(self.meta):
            out.write(f"# {key}={_fmt_meta(self.meta[key])}\n")
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        text = out.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % float(v)


def _fmt_meta(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def _base_meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "version": __version__, "kind": cfg.kind}


# ---------------------------------------------------------------------------
# instance construction


def haar_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign fix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def signed_orthogonal_dynamics(rho: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``U diag(rho, ..., rho, -rho, ..., -rho) U^T`` with ``floor(n/2)`` positive entries."""
    U = haar_orthogonal(rng, n)
    d = np.full(n, -float(rho))
    d[: n // 2] = rho
    return (U * d) @ U.T


def _cell_key(cfg: ExperimentConfig, **values) -> tuple:
    parts = []
    for name in sorted(values):
        parts += [role_id(name), value_id(values[name])]
    return child_key(cfg.seed, CELL, *parts)


def _dynamics(cfg: ExperimentConfig, n: int) -> DynamicsPair:
    if cfg.dynamics == "identity":
        return DynamicsPair.identity(n)
    if cfg.dynamics == "zero":
        return DynamicsPair(np.zeros((n, n)), np.eye(n))
    r = cfg.jordan_r
    if n % r:
        raise ConfigError(f"jordan_r={r} must divide n={n}")
    return DynamicsPair(block_jordan(r, n // r), np.eye(n))


def _bootstrap_ratio_ci(a, b, reps, rng, level=0.95):
    a = np.asarray(a)
    b = np.asarray(b)
    ia = rng.integers(0, a.size, size=(reps, a.size))
    ib = rng.integers(0, b.size, size=(reps, b.size))
    ratios = a[ia].mean(axis=1) / b[ib].mean(axis=1)
    q = (1 - level) / 2
    return float(np.quantile(ratios, q)), float(np.quantile(ratios, 1 - q))


# ---------------------------------------------------------------------------
# experiments


def risk_ratio_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Ratio of mean OLS risk on the LDS problem over its independent-marginals twin.

    Per trial, ``A = U diag(+-rho) U^T`` with Haar ``U`` and ``B = I/2``
    (process noise ``N(0, I/4)``). The LDS problem uses next-state labels
    ``y_t = x_{t+1}``; the baseline draws ``x_t ~ N(0, Sigma_t(A, B))``
    independently with labels ``A x_t + N(0, I/4)``. Risk is measured in
    the analytic ``Gamma_{T'}(A, B)``.
    """
    n, T = cfg.n, cfg.T
    Tp = cfg.Tprime or T
    rows = []
    for rho in sorted(cfg.rho_grid):
        for m in sorted(cfg.m_grid):
            key = _cell_key(cfg, rho=rho, m=m)

            def trial(j, key=key, rho=rho, m=m):
                tkey = child_key(key, TRIAL, j)
                A = signed_orthogonal_dynamics(rho, n, substream(tkey, DYNAMICS))
                dyn = DynamicsPair(A, 0.5 * np.eye(n))
                Gamma = avg_covariance(dyn, Tp)

                lds = LDSProcess(dyn).sample(m, T, child_key(tkey, LDS_DATA), retain_noise=True)
                lab = label_batch(lds, A, "sysid_coupled")
                fit_l = solve_ols(lds.X, lab.Y)

                ind = IIDGaussianProcess.lds_marginals(dyn).sample(m, T, child_key(tkey, IND_DATA))
                lab_i = label_batch(ind, A, "gaussian_decoupled", 0.5, child_key(tkey, IND_NOISE))
                fit_i = solve_ols(ind.X, lab_i.Y)
                return (
                    risk(fit_l.W_hat, A, Gamma),
                    risk(fit_i.W_hat, A, Gamma),
                    (not fit_l.full_rank) + (not fit_i.full_rank),
                )

            res = parallel_map(trial, range(cfg.trials), cfg.threads)
            lds_r = np.array([r[0] for r in res])
            ind_r = np.array([r[1] for r in res])
            failures = int(sum(r[2] for r in res))
            lm, ls = mean_and_se(lds_r)
            im, is_ = mean_and_se(ind_r)
            lo, hi = _bootstrap_ratio_ci(lds_r, ind_r, cfg.bootstrap, substream(key, BOOTSTRAP))
            rows.append(
                {
                    "rho": float(rho),
                    "m": int(m),
                    "ratio": lm / im,
                    "ci_low": lo,
                    "ci_high": hi,
                    "lds_mean": lm,
                    "lds_se": ls,
                    "ind_mean": im,
                    "ind_se": is_,
                    "trials": cfg.trials,
                    "rank_failures": failures,
                    "flagged": failures > FLAG_FRACTION * 2 * cfg.trials,
                }
            )
    cols = ["rho", "m", "ratio", "ci_low", "ci_high", "lds_mean", "lds_se", "ind_mean", "ind_se",
            "trials", "rank_failures", "flagged"]
    meta = _base_meta(cfg) | {"n": n, "T": T, "Tprime": Tp}
    return ResultTable(cols, rows, meta)


PREDICTED_SLOPE = {
    ("many_traj", "T"): -1.0,
    ("many_traj", "m"): -1.0,
    ("few_traj", "T"): -1.0,
    ("few_traj", "m"): -2.0,
    ("ind_seq", "T"): -1.0,
    ("ind_seq", "m"): -1.0,
    ("param_recovery", "T"): None,
    ("param_recovery", "m"): -1.0,
}


def _normalizer(cfg, family, n, p, m, T, Gamma_T) -> float:
    if family == "few_traj":
        return m * m * T / float(n * n)
    if family == "param_recovery":
        return m * T * float(np.linalg.eigvalsh(Gamma_T)[0]) / float(p * n)
    return m * T / float(p * n)


def rate_scan(cfg: ExperimentConfig) -> ResultTable:
    """Mean OLS excess risk over a ``T`` or ``m`` grid with its log-log slope.

    ``param_recovery`` reports squared Frobenius parameter error instead of risk.
    Labels use decoupled Gaussian noise of scale ``sigma_xi``; the
    ``ind_seq`` family replaces the LDS by independent draws from its marginals.
    """
    family = cfg.family
    n = cfg.n
    p = cfg.p or 1
    dyn = _dynamics(cfg, n)
    grid = sorted(cfg.T_grid if cfg.vary == "T" else cfg.m_grid)
    if family in ("many_traj", "param_recovery"):
        bad = [m for m in ([cfg.m] if cfg.vary == "T" else grid) if m < cfg.regime_c * n]
        if bad:
            raise ConfigError(f"{family} needs m >= {cfg.regime_c} * n; got m={bad}")
    W_star = substream(cfg.seed, WSTAR).standard_normal((p, n))
    proc = IIDGaussianProcess.lds_marginals(dyn) if family == "ind_seq" else LDSProcess(dyn)

    rows = []
    for g in grid:
        T = g if cfg.vary == "T" else cfg.T
        m = cfg.m if cfg.vary == "T" else g
        Tp = cfg.Tprime or T
        Gamma = avg_covariance(dyn, Tp)
        Gamma_T = avg_covariance(dyn, T)
        key = _cell_key(cfg, T=T, m=m)

        def trial(j, key=key, m=m, T=T, Gamma=Gamma):
            tkey = child_key(key, TRIAL, j)
            batch = proc.sample(m, T, child_key(tkey, LDS_DATA))
            lab = label_batch(batch, W_star, "gaussian_decoupled", cfg.sigma_xi, child_key(tkey, LDS_NOISE))
            fit = solve_ols(batch.X, lab.Y)
            val = param_error(fit.W_hat, W_star) if family == "param_recovery" else risk(fit.W_hat, W_star, Gamma)
            return val, not fit.full_rank

        res = parallel_map(trial, range(cfg.trials), cfg.threads)
        vals = np.array([r[0] for r in res])
        failures = int(sum(r[1] for r in res))
        mean, se = mean_and_se(vals)
        scale = _normalizer(cfg, family, n, p, m, T, Gamma_T)
        rows.append(
            {
                cfg.vary: int(g),
                "mean": mean,
                "se": se,
                "normalized": mean * scale,
                "normalized_se": se * scale,
                "trials": cfg.trials,
                "rank_failures": failures,
                "flagged": failures > FLAG_FRACTION * cfg.trials,
            }
        )
    means = [r["mean"] for r in rows]
    slope = loglog_slope(grid, means) if len(grid) >= 2 else None
    meta = _base_meta(cfg) | {
        "family": family,
        "vary": cfg.vary,
        "slope": slope,
        "predicted_slope": PREDICTED_SLOPE.get((family, cfg.vary)),
    }
    cols = [cfg.vary, "mean", "se", "normalized", "normalized_se", "trials", "rank_failures", "flagged"]
    return ResultTable(cols, rows, meta)


def lower_vs_ols(cfg: ExperimentConfig) -> ResultTable:
    """Mean OLS risk next to ``sigma_xi^2 p E Tr(Gamma^{1/2} (X^T X)^{-1} Gamma^{1/2})``.

    Both sides use the same covariate draws; rows are indexed by ``(m, T)``
    over ``m_grid x T_grid`` (``T_grid`` defaults to ``[T]``).
    """
    n = cfg.n
    p = cfg.p or 1
    dyn = _dynamics(cfg, n)
    proc = LDSProcess(dyn)
    W_star = substream(cfg.seed, WSTAR).standard_normal((p, n))
    rows = []
    for m in sorted(cfg.m_grid):
        for T in sorted(cfg.T_grid or [cfg.T]):
            Tp = cfg.Tprime or T
            Gamma = avg_covariance(dyn, Tp)
            key = _cell_key(cfg, T=T, m=m)

            def trial(j, key=key, m=m, T=T, Gamma=Gamma):
                tkey = child_key(key, TRIAL, j)
                batch = proc.sample(m, T, child_key(tkey, LDS_DATA))
                lab = label_batch(batch, W_star, "gaussian_decoupled", cfg.sigma_xi, child_key(tkey, LDS_NOISE))
                fit = solve_ols(batch.X, lab.Y)
                ti = trace_inverse(batch.X, Gamma)
                lb = np.nan if ti is None else cfg.sigma_xi**2 * p * ti
                return risk(fit.W_hat, W_star, Gamma), lb

            res = parallel_map(trial, range(cfg.trials), cfg.threads)
            ols = np.array([r[0] for r in res])
            lb = np.array([r[1] for r in res])
            ok = np.isfinite(lb)
            failures = int((~ok).sum())
            om, os_ = mean_and_se(ols[ok])
            lm, ls = mean_and_se(lb[ok])
            comb = float(np.hypot(os_, ls))
            rows.append(
                {
                    "m": int(m),
                    "T": int(T),
                    "ols_mean": om,
                    "ols_se": os_,
                    "bound_mean": lm,
                    "bound_se": ls,
                    "margin": om - lm,
                    "combined_se": comb,
                    "dominates": om >= lm - 3 * comb,
                    "trials": cfg.trials,
                    "rank_failures": failures,
                    "flagged": failures > FLAG_FRACTION * cfg.trials,
                }
            )
    cols = ["m", "T", "ols_mean", "ols_se", "bound_mean", "bound_se", "margin", "combined_se",
            "dominates", "trials", "rank_failures", "flagged"]
    return ResultTable(cols, rows, _base_meta(cfg) | {"n": n, "p": p, "sigma_xi": cfg.sigma_xi})


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return {"risk_ratio": risk_ratio_experiment, "rate_scan": rate_scan, "lower_vs_ols": lower_vs_ols}[cfg.kind](cfg)


def trace_inverse_table(process, m: int, T: int, Gamma, trials: int, seed: SeedKey, threads: int = 1) -> ResultTable:
    """CSV-ready wrapper around :func:`trajls.lowerbound.expected_trace_inverse_mc`."""
    from .lowerbound import expected_trace_inverse_mc

    est = expected_trace_inverse_mc(process, m, T, Gamma, trials, seed, threads=threads)
    row = {"m": m, "T": T, "n": process.n, "mean": est.mean, "se": est.se, "trials": trials, "rank_failures": est.failures}
    meta = {"seed": json.dumps(seed) if not isinstance(seed, int) else seed, "version": __version__, "kind": "trace_inverse"}
    return ResultTable(["m", "T", "n", "mean", "se", "trials", "rank_failures"], [row], meta)


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultTable",
    "haar_orthogonal",
    "lower_vs_ols",
    "rate_scan",
    "risk_ratio_experiment",
    "run_experiment",
    "signed_orthogonal_dynamics",
    "trace_inverse_table",
]
