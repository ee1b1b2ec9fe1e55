"""Command-line entry point.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical refusal
(rank or conditioning), 1 anything else. Diagnostics go to stderr, data to
``--output`` or stdout. Relative output paths are resolved against
``$TRAJLS_OUTPUT_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._utils import DomainError, NumericalRefusal
from .batchio import read_batch, to_json, write_batch, write_scan
from .covkit import DynamicsPair, block_jordan, condition_number, controllability_index, spectral_radius
from .experiments import ConfigError, ExperimentConfig, run_experiment, trace_inverse_table
from .generators import (
    AlternatingHalfspaces,
    CopiesProcess,
    IIDGaussianProcess,
    LDSProcess,
    NormalSubspaces,
    estimate_gamma,
    label_batch,
)
from .lowerbound import build_theta, theta_scan, theta_scan_m, ulam_scan, s_matrix_spectrum, solve_stylized
from .regression import solve_ols
from .smallball import certify

OUTPUT_ENV = "TRAJLS_OUTPUT_DIR"
STOCHASTIC = {"generate", "certify", "experiment"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _matrix(value, n: int, name: str) -> np.ndarray:
    """``identity``, ``zero``, ``jordan``, a JSON literal, or ``@file.json``."""
    if isinstance(value, (list, np.ndarray)):
        return np.asarray(value, dtype=float)
    if value == "identity":
        return np.eye(n)
    if value == "zero":
        return np.zeros((n, n))
    if value == "jordan":
        return block_jordan(n, 1)
    try:
        if value.startswith("@"):
            with open(value[1:]) as fh:
                return np.asarray(json.load(fh), dtype=float)
        return np.asarray(json.loads(value), dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse --{name} {value!r}: {exc}") from exc


def _dynamics(args) -> DynamicsPair:
    if args.n is None:
        raise ConfigError("--n is required")
    return DynamicsPair(_matrix(args.A, args.n, "A"), _matrix(args.B, args.n, "B"))


def _process(args):
    kind = args.kind
    if kind == "lds":
        return LDSProcess(_dynamics(args))
    if args.n is None:
        raise ConfigError("--n is required")
    if kind == "iid_lds":
        return IIDGaussianProcess.lds_marginals(_dynamics(args))
    if kind == "doubling":
        return IIDGaussianProcess.doubling(args.n)
    if kind == "copies":
        return CopiesProcess(np.eye(args.n))
    if kind == "alternating_halfspaces":
        return AlternatingHalfspaces(args.n)
    if kind == "normal_subspaces":
        return NormalSubspaces(args.n)
    raise ConfigError(f"unknown process kind {kind!r}")


PROCESS_CHOICES = ["lds", "iid_lds", "doubling", "copies", "alternating_halfspaces", "normal_subspaces"]


def _add_process_args(p):
    p.add_argument("--kind", default="lds", choices=PROCESS_CHOICES)
    p.add_argument("--A", default="identity", help="identity, zero, jordan, JSON matrix or @file")
    p.add_argument("--B", default="identity")
    p.add_argument("--n", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajls", description="Least squares on trajectory data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON file; any flag may appear there, flags win")
        p.add_argument("--output", "-o", help="output path (default stdout)")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="sample a trajectory batch as CSV")
    common(p)
    _add_process_args(p)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--labels", choices=["none", "decoupled", "sysid"], default="none")
    p.add_argument("--W-star", dest="W_star", help="JSON matrix (default A for sysid, identity otherwise)")
    p.add_argument("--sigma-xi", dest="sigma_xi", type=float, default=1.0)

    p = sub.add_parser("fit", help="OLS fit of a labeled batch CSV")
    common(p, seed=False)
    p.add_argument("--input", "-i", required=False)

    p = sub.add_parser("certify", help="empirical trajectory small-ball certificate (JSON)")
    common(p)
    _add_process_args(p)
    p.add_argument("--T", type=int, required=False)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--eps-grid", dest="eps_grid", type=_float_list, default=list(np.logspace(-4, -1, 7)))
    p.add_argument("--directions", type=int, default=16)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--prefixes", type=int, default=8)

    p = sub.add_parser("lowerbound", help="lower-bound numerics")
    common(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--stylized", action="store_true", help="solve the stylized root for Sigma^{-1} eigenvalues")
    mode.add_argument("--trace-inverse", dest="trace_inverse", action="store_true")
    p.add_argument("--eigs", type=_float_list, help="eigenvalues of Sigma^{-1} (default q ones)")
    p.add_argument("--q", type=int)
    _add_process_args(p)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--Tprime", type=int)
    p.add_argument("--trials", type=int, default=1000)

    p = sub.add_parser("spectrum", help="eigenvalues of S_T or Theta, or dynamics diagnostics")
    common(p, seed=False)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--s-matrix", dest="s_matrix", action="store_true")
    mode.add_argument("--theta", action="store_true")
    mode.add_argument("--dynamics", action="store_true")
    p.add_argument("--T", type=int)
    p.add_argument("--Tprime", type=int)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--A", default="identity")
    p.add_argument("--B", default="identity")
    p.add_argument("--n", type=int)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment from a JSON config")
    common(p)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("slopes", help="conjecture scans (CSV with fitted log-log slope)")
    common(p, seed=False)
    p.add_argument("--scan", choices=["theta", "ulam"], default="theta")
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--n-grid", dest="n_grid", type=_int_list, default=[16, 32, 64, 128, 256])
    p.add_argument("--m-grid", dest="m_grid", type=_int_list)
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--alpha-grid", dest="alpha_grid", type=_int_list, default=[2, 4, 8, 16, 32, 64])
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _parse(argv):
    """Parse twice: JSON config values become defaults, explicit flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config) if getattr(args, "config", None) else {}
    if args.command == "experiment":
        return args, config
    if config:
        known = set(vars(args))
        unknown = set(config) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**config)
        args = parser.parse_args(argv)
    return args, config


def _emit(text: str, args, default_name: str):
    path = args.output
    outdir = os.environ.get(OUTPUT_ENV)
    if path is None and outdir:
        path = default_name
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    if outdir and not os.path.isabs(path):
        os.makedirs(outdir, exist_ok=True)
        path = os.path.join(outdir, path)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    print(f"wrote {path}", file=sys.stderr)


def _cmd_generate(args) -> str:
    proc = _process(args)
    batch = proc.sample(args.m, args.T, args.seed, retain_noise=True) if isinstance(proc, LDSProcess) else proc.sample(args.m, args.T, args.seed)
    if args.labels == "none":
        return write_batch(batch)
    if args.labels == "sysid":
        if not isinstance(proc, LDSProcess):
            raise ConfigError("sysid labels need --kind lds")
        W = proc.dyn.A if args.W_star is None else _matrix(args.W_star, args.n, "W-star")
        return write_batch(label_batch(batch, W, "sysid_coupled"))
    W = np.eye(proc.n) if args.W_star is None else _matrix(args.W_star, proc.n, "W-star")
    return write_batch(label_batch(batch, W, "gaussian_decoupled", args.sigma_xi, args.seed))


def _cmd_fit(args) -> str:
    if args.input in (None, "-"):
        text = sys.stdin.read()
    else:
        try:
            with open(args.input) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
    rec = read_batch(text)
    if rec.y is None:
        raise ConfigError("batch has no labels; generate with --labels")
    fit = solve_ols(rec.X, rec.Y)
    out = {"W_hat": fit.W_hat, "rank": fit.rank, "full_rank": fit.full_rank, "min_eig": fit.min_eig,
           "m": rec.header["m"], "T": rec.header["T"], "n": rec.header["n"], "p": rec.header["p"]}
    return to_json(out, indent=2) + "\n"


def _cmd_certify(args) -> str:
    if args.T is None:
        raise ConfigError("--T is required")
    proc = _process(args)
    Psi = proc.analytic_gamma(args.k)
    if Psi is None:
        Psi = estimate_gamma(proc, args.k, 20000, (args.seed, 1)).mean
    cert = certify(proc, args.T, args.k, Psi, args.eps_grid, args.directions, args.trials, args.seed,
                   n_prefix=args.prefixes, threads=args.threads or 1)
    return to_json(cert.to_dict(), indent=2) + "\n"


def _cmd_lowerbound(args) -> str:
    if args.trace_inverse:
        if args.seed is None:
            raise ConfigError("--seed is required for --trace-inverse")
        proc = _process(args)
        Tp = args.Tprime or args.T
        Gamma = proc.analytic_gamma(Tp)
        if Gamma is None:
            raise ConfigError("process has no analytic Gamma; use an LDS or iid kind")
        return trace_inverse_table(proc, args.m, args.T, Gamma, args.trials, args.seed, args.threads or 1).to_csv()
    if args.n is None:
        raise ConfigError("--n is required")
    eigs = args.eigs if args.eigs else ([1.0] * args.q if args.q else None)
    if eigs is None:
        raise ConfigError("--stylized needs --eigs or --q")
    sol = solve_stylized(eigs, args.n)
    out = {"xbar": sol.xbar, "sp_value": sol.sp_value, "ybar": sol.ybar, "residual": sol.residual,
           "iterations": sol.iterations}
    return to_json(out, indent=2) + "\n"


def _cmd_spectrum(args) -> str:
    if args.dynamics:
        if args.n is None:
            raise ConfigError("--n is required")
        dyn = DynamicsPair(_matrix(args.A, args.n, "A"), _matrix(args.B, args.n, "B"))
        try:
            gamma = condition_number(dyn)
        except (DomainError, NumericalRefusal):
            gamma = None
        out = {"spectral_radius": spectral_radius(dyn.A), "condition_number": gamma,
               "controllability_index": controllability_index(dyn)}
        return to_json(out, indent=2) + "\n"
    if args.T is None:
        raise ConfigError("--T is required")
    if args.theta:
        th = build_theta(args.r, args.T, args.Tprime or args.T)
        evals = np.linalg.eigvalsh(th.theta)
    else:
        evals = s_matrix_spectrum(args.T)
    lines = ["index,eigenvalue"] + [f"{i + 1},%.17g" % v for i, v in enumerate(evals)]
    return "\n".join(lines) + "\n"


def _cmd_slopes(args) -> str:
    if args.scan == "ulam":
        scan = ulam_scan(args.r, args.k, args.alpha_grid)
    elif args.m_grid:
        scan = theta_scan_m(args.r, args.n, args.m_grid)
    else:
        scan = theta_scan(args.r, args.n_grid, m=args.m)
    return write_scan(scan)


def _cmd_experiment(args, config) -> str:
    data = dict(config)
    for key in ("seed", "trials", "threads", "output"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if "seed" not in data:
        raise ConfigError("--seed (or a 'seed' config field) is required")
    cfg = ExperimentConfig.from_dict(data)
    args.output = cfg.output
    return run_experiment(cfg).to_csv()


DEFAULT_NAMES = {"generate": "batch.csv", "fit": "fit.json", "certify": "certificate.json",
                 "lowerbound": "lowerbound.out", "spectrum": "spectrum.csv", "experiment": "experiment.csv",
                 "slopes": "slopes.csv"}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, config = _parse(argv)
        if args.command in STOCHASTIC and args.command != "experiment" and args.seed is None:
            raise ConfigError(f"--seed is required for '{args.command}'")
        if args.command == "experiment":
            text = _cmd_experiment(args, config)
        else:
            text = globals()[f"_cmd_{args.command}"](args)
        _emit(text, args, DEFAULT_NAMES[args.command])
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalRefusal as exc:
        print(f"numerical refusal: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
