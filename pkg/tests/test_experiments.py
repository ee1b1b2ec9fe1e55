import io
import json

import numpy as np
import pytest

from trajls import __version__
from trajls.experiments import (
    ConfigError,
    ExperimentConfig,
    ResultTable,
    haar_orthogonal,
    lower_vs_ols,
    rate_scan,
    risk_ratio_experiment,
    run_experiment,
    signed_orthogonal_dynamics,
)


def small_ratio_cfg(**kw):
    base = dict(kind="risk_ratio", n=3, T=10, trials=60, seed=3, rho_grid=[0.5, 1.0], m_grid=[1, 2], bootstrap=200)
    base.update(kw)
    return ExperimentConfig(**base)


def parse_csv(text):
    meta = {}
    lines = text.splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# "):
            k, v = ln[2:].split("=", 1)
            meta[k] = v
    cols = body[0].split(",")
    rows = [dict(zip(cols, ln.split(","))) for ln in body[1:]]
    return meta, rows


# --- config ----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(m_grid=[])
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="rate_scan", family="weird", T_grid=[4])
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="rate_scan", T_grid=[])
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="lower_vs_ols", noise="sysid_coupled")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "risk_ratio", "bogus": 1})


def test_config_json_roundtrip_and_digest():
    cfg = small_ratio_cfg()
    back = ExperimentConfig.from_json(json.dumps(cfg.to_dict()))
    assert back == cfg
    assert small_ratio_cfg(threads=8).digest() == cfg.digest()
    assert small_ratio_cfg(seed=4).digest() != cfg.digest()


# --- orthogonal sampling ---------------------------------------------------


def test_haar_orthogonal_properties():
    rng = np.random.default_rng(0)
    Qs = np.stack([haar_orthogonal(rng, 3) for _ in range(4000)])
    np.testing.assert_allclose(Qs[0] @ Qs[0].T, np.eye(3), atol=1e-12)
    # Haar: each entry has mean 0 and second moment 1/n; both determinant signs occur
    assert abs(Qs[:, 0, 0].mean()) < 0.03
    assert Qs[:, 0, 0].var() == pytest.approx(1 / 3, abs=0.03)
    dets = np.linalg.det(Qs)
    assert 0.4 < np.mean(dets > 0) < 0.6


def test_signed_dynamics_spectrum():
    A = signed_orthogonal_dynamics(0.9, 5, np.random.default_rng(1))
    np.testing.assert_allclose(A, A.T, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(A)), [-0.9, -0.9, -0.9, 0.9, 0.9], atol=1e-12)


# --- results table ---------------------------------------------------------


def test_result_table_csv_is_lossless():
    x = 0.1 + 0.2
    table = ResultTable(["a", "b", "c"], [{"a": 1, "b": x, "c": True}], {"seed": 5, "version": __version__})
    buf = io.StringIO()
    text = table.to_csv(buf)
    assert buf.getvalue() == text
    meta, rows = parse_csv(text)
    assert meta["seed"] == "5"
    assert float(rows[0]["b"]) == x and rows[0]["c"] == "1"


# --- risk ratio ------------------------------------------------------------


def test_risk_ratio_rows_and_metadata():
    cfg = small_ratio_cfg()
    table = risk_ratio_experiment(cfg)
    assert [(r["rho"], r["m"]) for r in table.rows] == [(0.5, 1), (0.5, 2), (1.0, 1), (1.0, 2)]
    for r in table.rows:
        assert r["ci_low"] <= r["ratio"] <= r["ci_high"]
        assert r["ratio"] == pytest.approx(r["lds_mean"] / r["ind_mean"])
        assert r["trials"] == 60 and r["rank_failures"] == 0 and not r["flagged"]
    meta, _ = parse_csv(table.to_csv())
    assert meta["config_hash"] == cfg.digest() and meta["version"] == __version__ and meta["seed"] == "3"


def test_risk_ratio_rho_zero_is_one():
    table = risk_ratio_experiment(small_ratio_cfg(rho_grid=[0.0], m_grid=[2], trials=400, bootstrap=500))
    r = table.rows[0]
    assert r["ci_low"] <= 1.0 <= r["ci_high"]


def test_risk_ratio_grid_self_consistency():
    both = risk_ratio_experiment(small_ratio_cfg(m_grid=[1, 3], rho_grid=[0.9]))
    a = risk_ratio_experiment(small_ratio_cfg(m_grid=[1], rho_grid=[0.9]))
    b = risk_ratio_experiment(small_ratio_cfg(m_grid=[3], rho_grid=[0.9]))
    assert both.rows == a.rows + b.rows


def test_risk_ratio_thread_determinism():
    one = risk_ratio_experiment(small_ratio_cfg()).to_csv()
    three = risk_ratio_experiment(small_ratio_cfg(threads=3)).to_csv()
    assert one == three


# --- rate scans ------------------------------------------------------------


def scan_cfg(**kw):
    base = dict(kind="rate_scan", family="many_traj", n=2, p=1, m=4, T_grid=[4, 8, 16], trials=100, seed=1,
                noise="gaussian_decoupled")
    base.update(kw)
    return ExperimentConfig(**base)


def test_rate_scan_many_traj_basic():
    table = rate_scan(scan_cfg())
    assert table.column("T").tolist() == [4, 8, 16]
    assert table.meta["predicted_slope"] == -1.0
    assert table.meta["slope"] < 0
    with pytest.raises(ConfigError):
        rate_scan(scan_cfg(m=1))


def test_rate_scan_single_point_has_no_slope():
    table = rate_scan(scan_cfg(T_grid=[8]))
    assert table.meta["slope"] is None and len(table.rows) == 1
    assert "# slope=" in table.to_csv()


def test_rate_scan_few_traj_normalized_is_bounded():
    cfg = scan_cfg(family="few_traj", n=4, m=2, T_grid=[16, 32, 64], trials=200)
    norm = rate_scan(cfg).column("normalized")
    assert np.all(norm > 0.05) and np.all(norm < 20)
    assert norm.max() / norm.min() < 3


def test_rate_scan_param_recovery_normalized_is_bounded():
    cfg = scan_cfg(family="param_recovery", n=2, m=8, T_grid=[8, 32, 128], trials=200)
    norm = rate_scan(cfg).column("normalized")
    assert norm.max() / norm.min() < 2.5 and norm.max() < 5


def test_rate_scan_ind_seq_and_m_axis():
    table = rate_scan(scan_cfg(family="ind_seq", vary="m", m_grid=[2, 4, 8], T=8, trials=200))
    assert table.columns[0] == "m"
    assert table.meta["slope"] == pytest.approx(-1.0, abs=0.35)


# --- lower bound vs OLS ----------------------------------------------------


def lvo_cfg(**kw):
    base = dict(kind="lower_vs_ols", n=3, p=1, m_grid=[2], T=8, trials=300, seed=4, noise="gaussian_decoupled",
                dynamics="zero")
    base.update(kw)
    return ExperimentConfig(**base)


def test_lower_vs_ols_iid_identity():
    r = lower_vs_ols(lvo_cfg()).rows[0]
    assert abs(r["ols_mean"] / r["bound_mean"] - 1) <= 3 * r["combined_se"] / r["bound_mean"]


def test_lower_vs_ols_quadratic_noise_scaling():
    a = lower_vs_ols(lvo_cfg(trials=50)).rows[0]
    b = lower_vs_ols(lvo_cfg(trials=50, sigma_xi=2.0)).rows[0]
    assert b["ols_mean"] == pytest.approx(4 * a["ols_mean"], rel=1e-10)
    assert b["bound_mean"] == pytest.approx(4 * a["bound_mean"], rel=1e-10)


def test_lower_vs_ols_identity_dynamics_underdetermined_trajectories():
    table = lower_vs_ols(lvo_cfg(dynamics="identity", n=6, m_grid=[2, 3], T_grid=[10, 20]))
    assert len(table.rows) == 4
    assert all(r["dominates"] for r in table.rows)


def test_run_experiment_dispatch():
    cfg = lvo_cfg(trials=20)
    assert run_experiment(cfg).to_csv() == lower_vs_ols(cfg).to_csv()
