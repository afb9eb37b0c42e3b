"""End-to-end CLI tests: exit codes, file formats, determinism."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from dtn_lqr.cli import main

from conftest import small_scenario_payload


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _load_summary(directory, name):
    with open(os.path.join(directory, name), "r", encoding="utf-8") as fh:
        return json.load(fh)


def test_feasibility_fig2_reports_indefinite(capsys):
    assert main(["feasibility", "--scenario", "fig2_c4_005"]) == 0
    out = capsys.readouterr().out
    assert "indefinite" in out
    assert "smallest" in out


def test_feasibility_uniform_reports_definite(capsys):
    assert main(["feasibility", "--scenario", "fig1_uniform"]) == 0
    out = capsys.readouterr().out
    assert "positive definite" in out


def test_sweep_writes_frontier(tmp_path):
    rc = main(["sweep", "--scenario", "fig1_uniform",
               "--sweep", "0:5:0.25", "--out", str(tmp_path)])
    assert rc == 0
    csv_path = tmp_path / "fig1_uniform_frontier.csv"
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "c1_over_c3,min_c4_over_c3,sufficient_bound"
    assert len(lines) == 22
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    # uniform normalized frontier is the closed form max(0, r - 1)
    assert np.max(np.abs(data[:, 1] - np.maximum(0.0, data[:, 0] - 1.0))) < 1e-4


def test_sweep_requires_range_flag():
    with pytest.raises(SystemExit):
        main(["sweep", "--scenario", "fig1_uniform"])


def test_sweep_rejects_malformed_range():
    with pytest.raises(SystemExit):
        main(["sweep", "--scenario", "fig1_uniform", "--sweep", "nope"])


def test_solve_ct_outputs_and_determinism(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["solve-ct", "--scenario", path, "--out", str(out1)]) == 0
    assert main(["solve-ct", "--scenario", path, "--out", str(out2)]) == 0
    csv1 = out1 / "small_ct_trajectory.csv"
    lines = csv1.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,X_1,Xhat_1,u_1,D"
    # every float token survives a parse/print round trip at %.17g
    for token in lines[1].split(","):
        assert f"{float(token):.17g}" == token
    assert _read(csv1) == _read(out2 / "small_ct_trajectory.csv")
    assert _read(out1 / "small_ct_summary.json") == \
        _read(out2 / "small_ct_summary.json")
    summary = _load_summary(str(out1), "small_ct_summary.json")
    assert summary["command"] == "solve-ct"
    assert summary["blow_up"] is False
    assert abs(summary["min_j_residual_rel"]) < 1e-4
    # the unconstrained optimum opens negative at X(0) = 0, and the
    # report must say so rather than hide it
    assert summary["constraint_violation_kinds"] == {"timer<0": 1}


def test_solve_ct_blow_up_exit_code(tmp_path, scenario_file, capsys):
    lam = 2.7875e-4
    payload = {
        "model": {"lambda_s": [lam] * 3, "lambda_d": [lam] * 3,
                  "N": [51.0, 50.0, 50.0]},
        "weights": {"c1": 1.0 / lam ** 2, "c3": 1.0, "c4": 0.005,
                    "u_bar": [0.0] * 3},
        "horizon": 3600.0,
    }
    path = scenario_file(payload, name="si_literal.json")
    rc = main(["solve-ct", "--scenario", path, "--out", str(tmp_path)])
    assert rc == 4
    assert "escaped" in capsys.readouterr().err


def test_solve_dt_tracks_ct_cost(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    assert main(["solve-ct", "--scenario", path,
                 "--out", str(tmp_path)]) == 0
    assert main(["solve-dt", "--scenario", path,
                 "--out", str(tmp_path)]) == 0
    ct = _load_summary(str(tmp_path), "small_ct_summary.json")
    dt = _load_summary(str(tmp_path), "small_dt_summary.json")
    rel = abs(dt["cost_scaled_units"] - ct["cost_scaled_units"]) \
        / abs(ct["cost_scaled_units"])
    assert rel < 0.01
    assert dt["steps"] == 1024


def test_solve_dt_delta_flag(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    assert main(["solve-dt", "--scenario", path, "--delta", "0.125",
                 "--out", str(tmp_path)]) == 0
    dt = _load_summary(str(tmp_path), "small_dt_summary.json")
    assert dt["Delta_s"] == 0.125
    assert dt["steps"] == 16


def test_solve_inf_reference_scenario(tmp_path):
    assert main(["solve-inf", "--scenario", "inf_demo",
                 "--out", str(tmp_path)]) == 0
    summary = _load_summary(str(tmp_path), "inf_demo_inf_summary.json")
    cls = summary["classes"][0]
    assert abs(cls["x_inf"] - 9.88) < 1e-9
    assert abs(cls["u_inf"] - (-0.36)) < 1e-9
    assert cls["bounds_verdict"] == "pass"
    assert cls["p"] == 2.0
    csv_path = tmp_path / "inf_demo_inf_trajectory.csv"
    assert csv_path.exists()


def test_solve_inf_requires_q(tmp_path, scenario_file, capsys):
    payload = small_scenario_payload()
    del payload["weights"]["q"]
    path = scenario_file(payload)
    rc = main(["solve-inf", "--scenario", path, "--out", str(tmp_path)])
    assert rc == 3
    assert "weights.q" in capsys.readouterr().err


def test_solve_dt_inf_reference_scenario(tmp_path):
    assert main(["solve-dt-inf", "--scenario", "inf_demo", "--delta", "0.01",
                 "--out", str(tmp_path)]) == 0
    summary = _load_summary(str(tmp_path), "inf_demo_dt_inf_summary.json")
    cls = summary["classes"][0]
    assert np.isclose(cls["S"], 208.11498227992806, rtol=1e-12)
    assert abs(cls["x_inf"] - 9.88) < 1e-9
    assert np.isclose(cls["S_Delta"], 2.0811498227992806, rtol=1e-12)
    assert cls["p_limit"] == 2.0
    assert np.isclose(cls["x_inf_limit"], 9.88, atol=1e-12)


def test_simulate_uncontrolled_determinism(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    out3 = tmp_path / "c"
    base = ["simulate", "--scenario", path, "--uncontrolled"]
    assert main(base + ["--out", str(out1)]) == 0
    assert main(base + ["--out", str(out2)]) == 0
    assert main(base + ["--out", str(out3), "--workers", "3"]) == 0
    for name in ("small_simulate_ensemble.csv", "small_simulate_summary.json"):
        assert _read(out1 / name) == _read(out2 / name)
        assert _read(out1 / name) == _read(out3 / name)
    lines = (out1 / "small_simulate_ensemble.csv").read_text(
        encoding="utf-8").splitlines()
    assert lines[0] == "t,meanxi_1,se_1,ode_X_1,mean_psi,D,cdf_Td"
    summary = _load_summary(str(out1), "small_simulate_summary.json")
    assert summary["runs"] == 64
    assert summary["uncontrolled"] is True
    assert 0.0 <= summary["delivered_fraction"] <= 1.0


def test_simulate_seed_and_runs_flags(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    args = ["simulate", "--scenario", path, "--uncontrolled",
            "--runs", "32", "--seed", "5"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert _read(out1 / "small_simulate_ensemble.csv") == \
        _read(out2 / "small_simulate_ensemble.csv")
    summary = _load_summary(str(out1), "small_simulate_summary.json")
    assert summary["runs"] == 32 and summary["base_seed"] == 5


def test_simulate_infeasible_optimal_schedule(tmp_path, capsys):
    # the optimal control opens negative at an empty network, which no
    # timer configuration can realize, so the run must abort
    rc = main(["simulate", "--scenario", "fig2_c4_05",
               "--runs", "8", "--out", str(tmp_path)])
    assert rc == 5
    err = capsys.readouterr().err
    assert "timer" in err or "u < 0" in err


def test_missing_scenario_exit_code(capsys):
    assert main(["solve-ct", "--scenario", "/does/not/exist.json"]) == 2
    assert "not found" in capsys.readouterr().err


def test_schema_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {}}', encoding="utf-8")
    assert main(["solve-ct", "--scenario", str(bad)]) == 3


def test_plot_flag_writes_figures(tmp_path, scenario_file):
    path = scenario_file(small_scenario_payload())
    assert main(["solve-ct", "--scenario", path, "--out", str(tmp_path),
                 "--plot"]) == 0
    assert main(["sweep", "--scenario", path, "--sweep", "0:2:0.5",
                 "--out", str(tmp_path), "--plot"]) == 0
    assert main(["simulate", "--scenario", path, "--uncontrolled",
                 "--out", str(tmp_path), "--plot"]) == 0
    for name in ("small_ct_trajectory.png", "small_frontier.png",
                 "small_simulate_ensemble.png"):
        png = tmp_path / name
        assert png.exists() and png.stat().st_size > 1000
