import csv
import subprocess
import sys
from pathlib import Path

import pytest

from ovfl import cli
from ovfl.config import RunConfig, dump_config, expand_cells, load_config, parse_config
from ovfl.errors import ConfigError
from ovfl.runner import RUN_HEADER, read_run_csv

SMALL = """
T: 3
seeds: [0]
world:
  num_sus: 2
  rss_per_slot: 4
model:
  extractor_sizes: [6, 5, 3]
"""


def test_empty_config_gives_defaults(tmp_path):
    f = tmp_path / "empty.yaml"
    f.write_text("")
    cfg = load_config(f)
    assert cfg == RunConfig()
    assert (cfg.T, cfg.eta, cfg.E, cfg.v) == (300, 1e-4, 1, 1.0)
    assert cfg.quantizer.bits_per_component == 32
    assert (cfg.world.num_pus, cfg.world.num_sus, cfg.world.area) == (2, 4, 500.0)
    assert cfg.model.extractor_sizes == [102, 128, 256, 64, 16]


def test_bad_bits_names_field_and_line():
    with pytest.raises(ConfigError) as e:
        parse_config("T: 10\nquantizer:\n  kind: uniform_scalar\n  bits_per_component: 0\n")
    assert e.value.field == "quantizer.bits_per_component"
    assert e.value.line == 4
    assert "quantizer.bits_per_component" in str(e.value)


def test_unknown_key_and_parse_error():
    with pytest.raises(ConfigError) as e:
        parse_config("world:\n  num_pu: 3\n")
    assert e.value.field == "world.num_pu"
    with pytest.raises(ConfigError) as e:
        parse_config("T: [1,\n")
    assert e.value.line is not None
    with pytest.raises(ConfigError):
        parse_config("grid:\n  quantizer.bitz: [1]\n")


def test_round_trip():
    cfg = parse_config(SMALL + "grid:\n  quantizer.bits_per_component: [2, 4]\nanalysis:\n  enabled: true\n")
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_grid_expansion_and_tags():
    cfg = parse_config("grid:\n  world.num_pus: [1, 4]\n  E: [1, 4]\n")
    cells = expand_cells(cfg)
    assert [t for t, _ in cells] == ["N1_E1", "N1_E4", "N4_E1", "N4_E4"]
    assert len(cells[-1][1].world.pu_positions) == 4
    assert cells[1][1].E == 4


def test_smoke_run_rows_determinism_and_grid(tmp_path):
    cfg_path = tmp_path / "c.yaml"
    text = SMALL.replace("seeds: [0]", "seeds: [0, 1]")
    cfg_path.write_text(text + "quantizer:\n  kind: uniform_scalar\ngrid:\n  quantizer.bits_per_component: [2, 4, 32]\n")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg_path), "--output-dir", str(out1)]) == 0
    assert cli.main(["run", str(cfg_path), "--output-dir", str(out2)]) == 0
    files = sorted(out1.glob("*.csv"))
    assert len(files) == 3 * 2
    for f in files:
        lines = f.read_text().split("\n")
        assert lines[0] == ",".join(RUN_HEADER)
        assert len([l for l in lines[1:] if l]) == 3
        assert f.read_bytes() == (out2 / f.name).read_bytes()
        assert b"\r\n" not in f.read_bytes()
    log = read_run_csv(files[0])
    assert [m.round for m in log.metrics] == [1, 2, 3]


def test_seed_override_env_var_and_analysis_outputs(tmp_path, monkeypatch):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(SMALL + "E: 2\nanalysis:\n  enabled: true\n  trace: true\n  comparator_budget: 5\n")
    monkeypatch.setenv("OVFL_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", str(cfg_path), "--seed-override", "3"]) == 0
    out = tmp_path / "env"
    assert (out / "ovfl__base__seed3.csv").exists()
    rows = list(csv.DictReader((out / "regret.csv").open()))
    assert len(rows) == 3 and rows[0]["run"] == "ovfl__base__seed3"
    probes = list(csv.DictReader((out / "probes.csv").open()))
    assert float(probes[0]["rho_hat"]) == 0.0


def test_cumulative_bits_column(tmp_path):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(SMALL + "algorithm: cc\n")
    cli.main(["run", str(cfg_path), "--output-dir", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "cc__base__seed0.csv").open()))
    ups = [int(r["bits_up"]) for r in rows]
    assert ups == [2 * 20 * 6 * 32] * 3
    assert [int(r["cum_bits"]) for r in rows] == [ups[0], 2 * ups[0], 3 * ups[0]]
    assert all(r["wall_ms"] == "0" for r in rows)


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("quantizer:\n  bits_per_component: 0\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert "quantizer.bits_per_component" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    div = tmp_path / "div.yaml"
    div.write_text(SMALL + "eta: 1.0e+6\n")
    assert cli.main(["run", str(div), "--output-dir", str(tmp_path / "o")]) == cli.EXIT_DIVERGED
    assert "round" in capsys.readouterr().err
    assert cli.main(["presets", "run", "nope"]) == cli.EXIT_CONFIG


def test_presets_shipped_and_loadable():
    names = cli.preset_names()
    assert names == sorted(["fig4_loss_vs_rounds", "fig5_loss_vs_bits", "fig6_E_sweep", "fig7_v_sweep",
                            "fig8_9_hex", "fig10_pu_sweep", "fig11_su_sweep", "fig12_bus_trace"])
    for n in names:
        cfg = load_config(cli.preset_path(n))
        assert expand_cells(cfg)
    bus = load_config(cli.preset_path("fig12_bus_trace"))
    assert Path(bus.trace_dir).is_dir() and bus.E == 4 and bus.T == 100


def test_console_entry_point_lists_presets():
    res = subprocess.run([sys.executable, "-m", "ovfl.cli", "presets", "list"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "fig4_loss_vs_rounds" in res.stdout.split()
