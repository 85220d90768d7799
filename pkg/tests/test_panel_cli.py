import json
import pathlib

import numpy as np
import pandas as pd
import pytest

import copgmm
from copgmm.cli import main
from copgmm.exceptions import InputError
from copgmm.panel import validate_panel, read_panel_csv

OUTS = ("y1", "y2")
COVS = ("x1", "x2", "x3", "x4", "x5")


def tiny_frame():
    return pd.DataFrame({
        "subject_id": [1, 1, 2],
        "period": [1, 2, 1],
        "lapse": [0, 1, 1],
        "y1": [0.0, 2.5, 1.0],
        "y2": [1.0, 0.0, 0.0],
        "x1": [1, 1, 0], "x2": [0.1] * 3, "x3": [0.2] * 3,
        "x4": [-0.1] * 3, "x5": [1, 2, 1],
    })


def test_validate_panel_ok():
    panel = validate_panel(tiny_frame(), OUTS, COVS, m=2)
    assert panel.m == 2 and panel.n_subjects == 2


def test_validate_panel_rejects_duplicates():
    df = tiny_frame()
    df.loc[3] = df.loc[0]
    with pytest.raises(InputError, match="duplicate"):
        validate_panel(df, OUTS, COVS, m=2)


def test_validate_panel_rejects_gap():
    df = tiny_frame()
    df.loc[df.index[-1], "period"] = 2  # subject 2 starts at period 2
    with pytest.raises(InputError, match="contiguous"):
        validate_panel(df, OUTS, COVS, m=2)


def test_validate_panel_rejects_rows_after_lapse():
    df = tiny_frame()
    extra = df.loc[[1]].copy()
    extra["period"] = 3
    extra["lapse"] = 0
    df = pd.concat([df, extra], ignore_index=True)
    with pytest.raises(InputError, match="past lapse"):
        validate_panel(df, OUTS, COVS, m=3)


def test_validate_panel_missing_column():
    df = tiny_frame().drop(columns=["x3"])
    with pytest.raises(InputError, match="x3"):
        validate_panel(df, OUTS, COVS)


def test_validate_panel_short_no_lapse():
    df = tiny_frame()
    # subject 2 has one row, never lapses, but m=2
    df["lapse"] = [0, 1, 0]
    with pytest.raises(InputError, match="periods present"):
        validate_panel(df, OUTS, COVS, m=2)


def _write_cfg(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def test_cli_simulate_deterministic(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json", {"n": 120, "phi1": 2.0,
                                           "phi2": 2.0})
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out1),
                 "--seed", "7"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out2),
                 "--seed", "7"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    panel = read_panel_csv(str(out1), OUTS, COVS)
    assert panel.n_subjects == 120


def test_cli_simulate_missing_key(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.json", {"m": 5})
    rc = main(["simulate", "--config", cfg, "--out",
               str(tmp_path / "x.csv")])
    assert rc == 2
    assert "'n'" in capsys.readouterr().err


def test_cli_fit_roundtrip(tmp_path):
    simcfg = _write_cfg(tmp_path / "sim.json",
                        {"n": 400, "phi1": 2.0, "phi2": 2.0, "seed": 21})
    panel_path = tmp_path / "panel.csv"
    assert main(["simulate", "--config", simcfg, "--out",
                 str(panel_path)]) == 0
    fitcfg = _write_cfg(tmp_path / "fit.json",
                        {"covariates": list(COVS), "power": 1.67})
    out = tmp_path / "fit.json.out"
    assert main(["fit", "--data", str(panel_path), "--config", fitcfg,
                 "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    theta = np.array(result["association"]["theta_gmm"])
    se = np.array(result["association"]["se"])
    truth = np.array([-0.2, 0.2, 0.1])
    assert np.all(np.abs(theta - truth) < 4.5 * se)
    assert result["association"]["df"] == result["association"]["n_moments"] - 3
    # output validates against the shipped schema
    import jsonschema
    schema = json.loads((pathlib.Path(copgmm.__file__).parent / "schemas"
                         / "fit_result.schema.json").read_text())
    jsonschema.validate(result, schema)


def test_cli_fit_single_period_rejects_temporal(tmp_path):
    df = pd.DataFrame({
        "subject_id": np.arange(80), "period": 1,
        "lapse": np.r_[np.ones(20, int), np.zeros(60, int)],
        "y1": np.r_[np.zeros(40), np.full(40, 2.0)],
        "y2": np.r_[np.zeros(50), np.full(30, 1.0)],
        "x1": np.tile([0, 1], 40).astype(float),
        "x2": np.linspace(-1, 1, 80), "x3": 0.0, "x4": 0.0, "x5": 1.0,
    })
    data = tmp_path / "p.csv"
    df.to_csv(data, index=False)
    cfg = _write_cfg(tmp_path / "f.json",
                     {"covariates": list(COVS),
                      "temporal": {"kind": "ar1", "psi_lapse": 0.4}})
    rc = main(["fit", "--data", str(data), "--config", cfg,
               "--out", str(tmp_path / "o.json")])
    assert rc == 2


def test_cli_fit_empty_file(tmp_path, capsys):
    data = tmp_path / "empty.csv"
    data.write_text("")
    cfg = _write_cfg(tmp_path / "f.json", {"covariates": list(COVS)})
    rc = main(["fit", "--data", str(data), "--config", cfg,
               "--out", str(tmp_path / "o.json")])
    assert rc == 2


def test_cli_fit_bad_rows(tmp_path):
    simcfg = _write_cfg(tmp_path / "sim.json", {"n": 60, "seed": 3})
    panel_path = tmp_path / "panel.csv"
    main(["simulate", "--config", simcfg, "--out", str(panel_path)])
    df = pd.read_csv(panel_path)
    df.loc[0, "y1"] = -1.0
    df.to_csv(panel_path, index=False)
    cfg = _write_cfg(tmp_path / "f.json", {"covariates": list(COVS)})
    rc = main(["fit", "--data", str(panel_path), "--config", cfg,
               "--out", str(tmp_path / "o.json")])
    assert rc == 2


def test_cli_table1_smoke(tmp_path, capsys):
    out_csv = tmp_path / "rep.csv"
    rc = main(["table1", "--n", "60", "--phi", "2.0", "--reps", "2",
               "--seed", "5", "--threads", "1",
               "--out-csv", str(out_csv)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "wide uncertainty" in text
    frame = pd.read_csv(out_csv)
    assert set(frame["parameter"]) == {"rho_L1", "rho_L2", "rho_12"}
