import functools
import json
import math

import numpy as np
import pytest
import yaml

from mcfqkd import cli
from mcfqkd.config import (ENV_VAR, channel_model, config_hash, default_config,
                           experiment_config, load_config, merge, protocol_params)
from mcfqkd.errors import ConfigError
from mcfqkd.io import read_table, write_metadata, write_table
from mcfqkd.selfcheck import check_mub, format_table, run_selfcheck
from mcfqkd.states import standard_bases


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


# --- config -------------------------------------------------------------------

def test_defaults_build_every_experiment():
    raw = default_config()
    for name in raw["experiments"]:
        cfg = experiment_config(raw, name)
        assert cfg.rng_seed == 0
    assert experiment_config(raw, "long_qber").duration == 7 * 3600
    assert experiment_config(raw, "stability_comparison", seed=9).rng_seed == 9
    assert protocol_params(raw).p_Z == 0.91
    assert channel_model(raw).loss_db == 7.0


def test_defaults_survive_yaml_roundtrip(tmp_path):
    raw = default_config()
    assert load_config(write_yaml(tmp_path / "c.yaml", raw)) == raw


def test_merge_partial_and_unknown_keys():
    raw = merge(default_config(), {"pll": {"ki": 100.0}, "seed": 4})
    assert raw["pll"]["ki"] == 100.0 and raw["pll"]["kp"] == 0.0 and raw["seed"] == 4
    with pytest.raises(ConfigError, match="pll.gain"):
        merge(default_config(), {"pll": {"gain": 1}})
    with pytest.raises(ConfigError, match="mapping"):
        merge(default_config(), {"pll": 3})
    # free-form and wholesale-replaced maps
    raw = merge(default_config(), {"source": {"mean_photon_numbers": {"bright": 0.5}}})
    assert raw["source"]["mean_photon_numbers"]["bright"] == 0.5
    raw = merge(default_config(), {"keyrate": {"optimize": {"p_Z": [0.6, 0.95]}}})
    assert raw["keyrate"]["optimize"] == {"p_Z": [0.6, 0.95]}


def test_invalid_values_raise_config_error():
    raw = merge(default_config(), {"pll": {"loop_rate": -1.0}})
    with pytest.raises(ConfigError, match="pll"):
        experiment_config(raw, "long_qber")
    with pytest.raises(ConfigError):
        experiment_config(default_config(), "nope")
    raw = merge(default_config(), {"protocol": {"p_Z": 1.5}})
    with pytest.raises(ConfigError):
        protocol_params(raw)


def test_load_config_sources(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert load_config() == default_config()
    p = write_yaml(tmp_path / "env.yaml", {"seed": 11})
    monkeypatch.setenv(ENV_VAR, p)
    assert load_config()["seed"] == 11
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("pll: [unclosed")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(bad)


def test_config_hash_stable():
    assert config_hash(default_config()) == config_hash(default_config())
    assert config_hash(default_config()) != config_hash(merge(default_config(), {"seed": 1}))


# --- io -----------------------------------------------------------------------

def test_table_roundtrip_and_nan(tmp_path):
    p = write_table(tmp_path / "t.csv", {"x": [1, 2], "y": [0.5, math.nan], "ok": [True, False]})
    rows = read_table(p)
    assert rows == [{"x": "1", "y": "0.5", "ok": "1"}, {"x": "2", "y": "", "ok": "0"}]
    with pytest.raises(ValueError):
        write_table(tmp_path / "u.csv", {"a": [1], "b": [1, 2]})


def test_metadata_sidecar(tmp_path):
    p = write_table(tmp_path / "t.csv", {"x": [1]})
    m = write_metadata(p, {"seed": np.int64(3), "v": np.array([1.0, math.inf])})
    assert m.name == "t.meta.json"
    meta = json.loads(m.read_text())
    assert meta["seed"] == 3 and meta["v"] == [1.0, "inf"]
    assert "software_version" in meta and "written_at" in meta


# --- selfcheck ------------------------------------------------------------------

def corrupted_bases(scheme):
    bases = standard_bases(scheme)
    if scheme == "this_work":
        return [bases[0], bases[0]]
    return bases


def test_selfcheck_passes_on_release_build():
    results = run_selfcheck()
    assert all(r.passed for r in results), format_table(results)
    names = [r.name for r in results]
    assert "set_point:oracle" in names and "drift:mcf" in names


def test_selfcheck_flags_corrupted_basis():
    results = check_mub(corrupted_bases)
    bad = [r.name for r in results if not r.passed]
    assert bad == ["mub:this_work"]


# --- cli ------------------------------------------------------------------------

def test_cli_selfcheck_exit_codes(monkeypatch, capsys):
    assert cli.main(["selfcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
    monkeypatch.setattr(cli, "run_selfcheck", functools.partial(run_selfcheck, corrupted_bases))
    assert cli.main(["selfcheck"]) == 4
    assert "FAIL" in capsys.readouterr().out


def test_cli_keyrate_default_point(tmp_path, capsys):
    assert cli.main(["keyrate", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "bit/pulse" in out
    rows = {r["quantity"]: r["value"] for r in read_table(tmp_path / "keyrate.csv")}
    assert 3.5e-5 < float(rows["rate"]) < 6.5e-5
    assert (tmp_path / "keyrate.meta.json").exists()


def test_cli_keyrate_optimize_small_grid(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {"keyrate": {"points": 5, "rounds": 2}})
    assert cli.main(["keyrate", "--optimize", "--config", cfg]) == 0
    assert "optimal p_Z" in capsys.readouterr().out


def test_cli_keyrate_stats_file(tmp_path, capsys):
    rows = {"basis": ["Z", "Z", "X", "X"], "intensity": ["mu1", "mu2", "mu1", "mu2"],
            "detections": [8e8, 2e8, 8e6, 2e6], "errors": [3e7, 8e6, 3e5, 8e4],
            "n_pulses": [1.6e12] * 4}
    good = write_table(tmp_path / "s.csv", rows)
    assert cli.main(["keyrate", "--stats", str(good)]) == 0
    rows["errors"][0] = 9e8
    bad = write_table(tmp_path / "bad.csv", rows)
    assert cli.main(["keyrate", "--stats", str(bad)]) == 2
    assert "exceed" in capsys.readouterr().err
    assert cli.main(["keyrate", "--stats", str(tmp_path / "none.csv")]) == 2
    assert cli.main(["keyrate", "--stats", str(write_table(tmp_path / "x.csv", {"basis": ["Z"]}))]) == 2


def test_cli_simulate_outputs_are_reproducible(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", {"experiments": {"state_distribution": {"duration": 0.5}}})
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["simulate", "--experiment", "state_distribution", "--config", cfg,
                         "--out", str(out), "--seed", "7"]) == 0
    assert (a / "state_distribution.csv").read_bytes() == (b / "state_distribution.csv").read_bytes()
    meta = json.loads((a / "state_distribution.meta.json").read_text())
    assert meta["seed"] == 7 and meta["subcommand"] == "simulate"


def test_cli_simulate_each_experiment(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {
        "experiments": {"stability_comparison": {"duration": 2.0, "bin": 0.01},
                        "long_qber": {"duration": 5.0},
                        "qkd_emulation": {"duration": 0.5, "step_seconds": 0.5}},
        "protocol": {"n_Z": 1e6}})
    for exp, files in (("stability_comparison", ["stability_mcf.csv", "stability_smf.csv"]),
                       ("long_qber", ["long_qber.csv"]),
                       ("qkd_emulation", ["qkd_statistics.csv"])):
        assert cli.main(["simulate", "--experiment", exp, "--config", cfg,
                         "--out", str(tmp_path / exp)]) == 0
        for f in files:
            assert (tmp_path / exp / f).exists()
    stats = read_table(tmp_path / "qkd_emulation" / "qkd_statistics.csv")
    assert [r["basis"] for r in stats] == ["Z", "Z", "X", "X"]
    # the statistics file feeds straight back into the key-rate report
    assert cli.main(["keyrate", "--stats", str(tmp_path / "qkd_emulation" / "qkd_statistics.csv")]) == 0


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["simulate", "--experiment", "nope", "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    assert cli.main(["simulate", "--experiment", "long_qber", "--config",
                     str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    cfg = write_yaml(tmp_path / "c.yaml", {"pll": {"bogus": 1}})
    assert cli.main(["keyrate", "--config", cfg]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_cli_simulation_error_exit_code(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", {
        "detectors": {"quantum": {"efficiency": 0.0, "dark_rate": 0.0}},
        "experiments": {"qkd_emulation": {"duration": 0.2}}, "protocol": {"n_Z": 1e6}})
    assert cli.main(["simulate", "--experiment", "qkd_emulation", "--config", cfg,
                     "--out", str(tmp_path)]) == 3
