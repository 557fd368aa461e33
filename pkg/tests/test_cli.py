import csv
import json

import numpy as np
import pytest

from bosonrg.cli import main, parse_config_text, ConfigError

SMALL = ["--modes-per-site", "2", "--grid", "33", "--set", "max_sweeps=200",
         "--set", "restarts=0"]


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main(list(args) + ["--out", str(out)])
    return code, out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_print_config(capsys):
    assert main(["dispersion", "--print-config", "--dim", "2", "--mass", "0.2"]) == 0
    text = capsys.readouterr().out
    assert "modes_per_site = 9" in text and "mass = 0.2" in text


def test_config_errors_report_line_and_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nmass = 0.2\nmodes_per_site = four\n")
    assert main(["dispersion", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "run.cfg:3" in err and "modes_per_site" in err
    cfg.write_text("mass = 0.2\nnot_a_key = 1\n")
    assert main(["dispersion", "--config", str(cfg)]) == 2
    assert "run.cfg:2" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="expected key = value"):
        parse_config_text("just words\n")


def test_flags_override_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mass = 0.2  # trailing comment\niterations = 5\n")
    assert main(["dispersion", "--config", str(cfg), "--iterations", "2", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "iterations = 2" in text and "mass = 0.2" in text


def test_dispersion_tau0_equals_exact(tmp_path):
    code, out = run(tmp_path, "d0", "dispersion", "--iterations", "0", *SMALL)
    assert code == 0
    table = rows(out / "dispersion.csv")
    assert set(table[0]) == {"tau", "kappa", "branch", "E_exact", "E_er", "E_lp"}
    e = np.array([[float(r["E_exact"]), float(r["E_er"]), float(r["E_lp"])] for r in table])
    assert np.max(np.abs(e[:, 1] - e[:, 0])) <= 1e-10
    assert np.max(np.abs(e[:, 2] - e[:, 0])) <= 1e-10
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["iterations"] == 0 and man["outputs"] == ["dispersion.csv"]


def test_dispersion_massive_gap(tmp_path):
    code, out = run(tmp_path, "dm", "dispersion", "--iterations", "3", "--mass", "0.2",
                    "--scheme", "ER", "--modes-per-site", "4", "--grid", "65")
    assert code in (0, 1)
    tau3 = [float(r["E_er"]) for r in rows(out / "dispersion.csv") if r["tau"] == "3"]
    assert min(tau3) == pytest.approx(1.6, rel=0.05)


def test_seventeen_digits(tmp_path):
    _, out = run(tmp_path, "d17", "dispersion", "--iterations", "0", *SMALL)
    line = (out / "dispersion.csv").read_text().splitlines()[1]
    kappa = line.split(",")[1]
    assert float(kappa) == -np.pi
    assert len(kappa.lstrip("-").replace(".", "")) == 17


def test_byte_identical_reruns(tmp_path):
    args = ["ham-flow", "--iterations", "2", "--scheme", "both", *SMALL]
    _, a = run(tmp_path, "a", *args)
    _, b = run(tmp_path, "b", *args)
    for name in ("ham_flow.csv", "hamiltonian_blocks.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len(list(a.glob("*.json"))) == 1


def test_error_sweep_columns(tmp_path):
    code, out = run(tmp_path, "es", "error-sweep", "--iterations", "2", "--scheme", "LP",
                    "--set", "m_values=2,4", "--grid", "65")
    assert code == 0
    table = rows(out / "error_sweep.csv")
    assert list(table[0]) == ["dimension", "scheme", "M", "tau", "E_bar_rs", "E_bar_ms", "delta_E"]
    assert {r["M"] for r in table} == {"2", "4"}
    tau0 = [float(r["delta_E"]) for r in table if r["tau"] == "0"]
    assert np.max(np.abs(tau0)) < 1e-3


def test_entropy_flow_and_budget(tmp_path, capsys):
    code, out = run(tmp_path, "ef", "entropy-flow", "--scheme", "LP", "--iterations", "2",
                    "--set", "extent=64")
    assert code == 0
    table = rows(out / "entropy_flow.csv")
    assert "delta_S_extrapolated" in table[0] and len(table) == 3
    code, _ = run(tmp_path, "big", "entropy-flow", "--set", "extent=8192")
    assert code == 2
    assert "max_modes" in capsys.readouterr().err


def test_mera_lossless_product_input(tmp_path):
    code, out = run(tmp_path, "mp", "mera", "--scheme", "ER", "--iterations", "2",
                    "--set", "extent=64", "--set", "state=product")
    assert code == 0
    err = rows(out / "mera_error.csv")[0]
    assert float(err["correlator_error"]) <= 1e-10
    assert (out / "mera" / "record.json").exists()


def test_depth_check(tmp_path, capsys):
    code, _ = run(tmp_path, "deep", "mera", "--iterations", "6", "--set", "extent=64")
    assert code == 2
    assert "fewer than four sites" in capsys.readouterr().err
