import csv
import json

import numpy as np
import pytest
import yaml

from aqis import cli
from aqis.runner import (
    PRESETS,
    ConfigError,
    SweepGrid,
    load_preset,
    resolve_config,
    run_from_config,
    run_id,
    sweep,
)


def small(**over):
    cfg = {
        "name": "small",
        "model": {"kind": "lmg", "N": 40},
        "protocol": {"g0": 0.0, "g1": 1.25, "tau": 1000},
        "state": {"kind": "microcanonical", "n_mc": 4},
        "metrics": ["distributions", "tau_sweep"],
        "settings": {"taus": {"start": 1000, "stop": 10000, "count": 32}},
    }
    cfg.update(over)
    return cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_presets_resolve():
    for name in PRESETS:
        cfg = resolve_config(load_preset(name))
        assert cfg["name"] == name
    fig2 = resolve_config(load_preset("fig2"))
    assert fig2["model"] == {"kind": "LMG", "N": 100}
    assert fig2["protocol"]["tau"] == 500 and fig2["state"]["n_mc"] == 10
    fig7 = resolve_config(load_preset("fig7"))
    assert fig7["model"]["ratio"] == 100 and fig7["state"]["alpha"] == 5 and fig7["protocol"]["g0"] == 2


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"metrics": []}, "metrics"),
        ({"metrics": ["nope"]}, "metrics[0]"),
        ({"model": {"kind": "lmg", "N": 41}}, "model.N"),
        ({"model": {"kind": "ising", "N": 4}}, "model.kind"),
        ({"protocol": {"g0": 0.0, "g1": 1.0, "tau": -1}}, "protocol.tau"),
        ({"state": {"kind": "coherent", "alpha": 1.0}}, "state.kind"),
        ({"metrics": ["trajectory"]}, "settings.dynamics"),
        ({"metrics": ["order_parameter"]}, "settings.g1_values"),
        ({"settings": {"taus": [3000, 2000]}}, "settings.taus"),
        ({"bogus": 1}, "<root>.bogus"),
    ],
)
def test_config_errors_name_the_key(patch, key):
    with pytest.raises(ConfigError) as err:
        resolve_config(small(**patch))
    assert err.value.key == key


def test_run_writes_csvs_manifest_and_plot(tmp_path):
    m = run_from_config(small(), tmp_path, workers=1)
    for name in ("distribution_sx_initial.csv", "distribution_energy_final.csv", "tau_sweep.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    assert any(o.startswith("plot_") for o in m.outputs)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["run_id"] == run_id(resolve_config(small()))
    assert doc["model"]["N"] == 40
    rows = read_csv(tmp_path / "tau_sweep.csv")
    assert len(rows) == 1 + 32
    pE0 = np.loadtxt(tmp_path / "distribution_energy_initial.csv", delimiter=",", skiprows=1)
    pE1 = np.loadtxt(tmp_path / "distribution_energy_final.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(pE0[:, 0], pE1[:, 0])
    np.testing.assert_allclose(pE0[:, 1], pE1[:, 1], rtol=0, atol=1e-15)


def test_run_is_deterministic_across_worker_counts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_from_config(small(), a, workers=1)
    run_from_config(small(), b, workers=3)
    for f in ("tau_sweep.csv", "distribution_sx_final.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_stateless_phase_run(tmp_path):
    cfg = small(metrics=["phases", "uniformity"], settings={"k_range": [0, 10], "bins": 10})
    del cfg["state"]
    run_from_config(cfg, tmp_path, workers=1)
    rows = read_csv(tmp_path / "phase_table.csv")
    assert rows[0] == ["k", "parity", "phase_rad", "phase_rate", "delta_phi_mod_2pi"]
    assert len(rows) == 1 + 2 * 10
    assert {r[1] for r in rows[1:]} == {"0", "1"}
    assert (tmp_path / "uniformity.csv").exists()


def test_spectrum_run(tmp_path):
    cfg = {"name": "spec", "model": {"kind": "lmg", "N": 10}, "metrics": ["spectrum"], "settings": {"g_values": [0.0, 0.5]}}
    run_from_config(cfg, tmp_path, workers=1)
    rows = read_csv(tmp_path / "spectrum.csv")
    assert rows[0] == ["g", "k", "parity", "energy"]
    assert len(rows) == 1 + 2 * 11


def test_singleton_sweep_equals_direct_run(tmp_path):
    direct = tmp_path / "direct"
    run_from_config(small(), direct, workers=1)
    rows = sweep(small(), tmp_path / "sw", SweepGrid("N_mc", (4,)), workers=1)
    assert len(rows) == 1 and rows[0]["errors"] == ""
    point = tmp_path / "sw" / "points" / "N_mc=4"
    assert (point / "tau_sweep.csv").read_bytes() == (direct / "tau_sweep.csv").read_bytes()


def test_sweep_resume_and_errors(tmp_path):
    cfg = small(sweep={"axis": "N_mc", "values": [2, 4, 30]})
    rows = sweep(cfg, tmp_path, workers=2)
    assert [r["N_mc"] for r in rows] == ["2", "4", "30"]
    # N = 40 has 20 doublets below the critical energy
    assert rows[2]["errors"].startswith("ConfigError")
    first = (tmp_path / "points" / "N_mc=2" / "summary.json").stat().st_mtime_ns
    again = sweep(cfg, tmp_path, workers=2)
    assert (tmp_path / "points" / "N_mc=2" / "summary.json").stat().st_mtime_ns == first
    assert [r["run_id"] for r in again] == [r["run_id"] for r in rows]


def test_sweep_grid_validation():
    with pytest.raises(ConfigError):
        SweepGrid("N_mc", (4, 4))
    with pytest.raises(ConfigError):
        SweepGrid("colour", (1,))
    with pytest.raises(ConfigError):
        SweepGrid("N_mc", (1.5,))


def write_yaml(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_cli_exit_codes(tmp_path, capsys):
    good = write_yaml(tmp_path / "good.yaml", small())
    assert cli.main(["cycle", "--config", str(good), "--out", str(tmp_path / "o"), "--threads", "1"]) == 0
    assert cli.main(["echo", "--config", str(good), "--out", str(tmp_path / "e"), "--threads", "1"]) == 0
    assert (tmp_path / "e" / "echo.csv").exists()
    bad = write_yaml(tmp_path / "bad.yaml", small(metrics=[]))
    assert cli.main(["cycle", "--config", str(bad), "--out", str(tmp_path / "b")]) == 2
    assert cli.main(["cycle", "--config", str(tmp_path / "missing.yaml")]) == 4
    assert cli.main(["cycle", "--config", str(good), "--threads", "0"]) == 2
    assert cli.main(["sweep", "--config", str(good), "--out", str(tmp_path / "s")]) == 2
    strict = write_yaml(
        tmp_path / "strict.yaml",
        small(settings={"quadrature": {"node_count": 9, "tolerance": 1e-9, "max_nodes": 33}, "taus": [1000, 2000]}),
    )
    assert cli.main(["cycle", "--config", str(strict), "--out", str(tmp_path / "q"), "--threads", "1"]) == 3
    err = capsys.readouterr().err
    assert "config error" in err and "numerical failure" in err


def test_cli_threads_from_environment(tmp_path, monkeypatch):
    good = write_yaml(tmp_path / "good.yaml", small())
    monkeypatch.setenv("AQIS_THREADS", "2")
    assert cli.main(["cycle", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["workers"] == 2
    monkeypatch.setenv("AQIS_THREADS", "x")
    assert cli.main(["cycle", "--config", str(good), "--out", str(tmp_path / "p")]) == 2


def test_cli_rejects_unknown_figure():
    with pytest.raises(SystemExit):
        cli.main(["fig", "9"])


def test_plot_scripts_for_echo_and_uniformity(tmp_path):
    cfg = small(metrics=["echo", "otoc", "uniformity"], settings={"k_range": [0, 10], "taus": [1000, 2000, 3000]})
    m = run_from_config(cfg, tmp_path, workers=1)
    scripts = [o for o in m.outputs if o.startswith("plot_")]
    text = "".join((tmp_path / s).read_text() for s in scripts)
    assert len(scripts) == 1
    assert 'label="1/dt"' in text
    assert "np.cos(th), np.sin(th)" in text
    assert "rescaled OTOC" in text
