import json

import numpy as np
import pytest
from scipy.stats import poisson

from ramandetect import cli
from ramandetect.stats import REFERENCE_MODEL, CountHistogram, telegraph_samples


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_hist(path, model, initial, n, seed):
    path.write_text(CountHistogram.from_counts(telegraph_samples(model, initial, n, seed)).to_csv())
    return path


def test_atom_dump(capsys):
    code, out, _ = run(capsys, "atom", "dump")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0] == "level,F,mF,energy_GHz,gF"
    assert len(lines) == 1 + 32


def test_atom_dump_spinless(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"atom": {"nuclear_spin": 0}}))
    code, out, _ = run(capsys, "--config", cfg, "atom", "dump")
    assert code == 0
    assert len(out.strip().splitlines()) == 1 + 2 + 2 + 4  # S, P1/2, D3/2


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run(capsys, "--config", cfg, "atom", "dump")[0] == 2
    cfg.write_text(json.dumps({"colour": 3}))
    assert run(capsys, "--config", cfg, "atom", "dump")[0] == 2
    assert run(capsys, "atom", "dump", "--config", tmp_path / "missing.json")[0] == 2


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "detect", "--events", 3)[0] == 2  # no seed
    assert run(capsys, "--seed", -1, "detect")[0] == 2


def test_pump_dark_states(capsys):
    code, out, _ = run(capsys, "pump", "dark-states")
    assert code == 0
    rows = out.strip().splitlines()[1:]
    assert len(rows) == 1 and rows[0].startswith("D3/2,3,3,")
    code, out, _ = run(capsys, "pump", "dark-states", "--with-d6")
    assert code == 0 and out.strip().splitlines() == ["level,F,mF,outflow_per_s"]
    code, out, _ = run(capsys, "pump", "dark-states", "--no-raman", "--resonant-only")
    assert code == 0 and len(out.strip().splitlines()) == 1 + 3 + 7


def test_pump_timescales_and_evolve(capsys):
    code, out, _ = run(capsys, "pump", "timescales")
    assert code == 0
    table = {l.split(",")[0]: float(l.split(",")[1]) for l in out.strip().splitlines()[1:]}
    assert 1e-5 <= table["clearing"] <= 1e-4
    code, out, _ = run(capsys, "pump", "evolve", "--variant", "dark")
    pops = [float(l.split(",")[3]) for l in out.strip().splitlines()[1:]]
    assert code == 0 and sum(pops) == pytest.approx(1.0, abs=1e-9)


def test_detect_single_event_and_determinism(capsys, tmp_path):
    code, out, _ = run(capsys, "--seed", 7, "detect", "--events", 1)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "n,count"
    assert sum(int(l.split(",")[1]) for l in lines[1:]) == 1
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "detect", "--events", 200, "--seed", 11, "--out", a)
    run(capsys, "detect", "--events", 200, "--seed", 11, "--out", b)
    assert (a / "bright_histogram.csv").read_bytes() == (b / "bright_histogram.csv").read_bytes()


def test_unsupported_beam_exits_3(tmp_path, capsys):
    from ramandetect.pumping import default_setup

    d = default_setup().to_dict()
    d.pop("atom")
    beam = dict(d["beams"][0], name="X", lower="D3/2", F=1, upper="P3/2", Fp=1)
    d["beams"].append(beam)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"setup": d}))
    assert run(capsys, "--config", cfg, "pump", "dark-states")[0] == 3
    assert run(capsys, "--config", cfg, "--seed", 1, "detect", "--events", 1)[0] == 3


def test_fit_roundtrip(tmp_path, capsys):
    hb = write_hist(tmp_path / "b.csv", REFERENCE_MODEL, "bright", 10_000, 137)
    hd = write_hist(tmp_path / "d.csv", REFERENCE_MODEL, "dark", 10_000, 138)
    code, out, _ = run(capsys, "fit", "--bright", hb, "--dark", hd)
    assert code == 0
    doc = json.loads(out)
    assert doc["nbar_bright"] == pytest.approx(8.7, abs=0.3)
    # the fit output is accepted as a model document
    (tmp_path / "fit.json").write_text(out)
    code, out, _ = run(capsys, "fidelity", "--model", tmp_path / "fit.json")
    assert code == 0 and 0.85 < json.loads(out)["fidelity"] < 0.95


def test_fit_errors(tmp_path, capsys, monkeypatch):
    hb = write_hist(tmp_path / "b.csv", REFERENCE_MODEL, "bright", 50, 1)
    hd = write_hist(tmp_path / "d.csv", REFERENCE_MODEL, "dark", 50, 2)
    assert run(capsys, "fit", "--bright", hb, "--dark", hd)[0] == 2
    (tmp_path / "x.csv").write_text("a,b\n")
    assert run(capsys, "fit", "--bright", tmp_path / "x.csv", "--dark", hd)[0] == 2

    hb = write_hist(tmp_path / "b.csv", REFERENCE_MODEL, "bright", 500, 1)
    hd = write_hist(tmp_path / "d.csv", REFERENCE_MODEL, "dark", 500, 2)
    real = cli.fit_histograms
    monkeypatch.setattr(cli, "fit_histograms", lambda b, d, w: real(b, d, w, max_iter=2))
    code, out, err = run(capsys, "fit", "--bright", hb, "--dark", hd)
    assert code == 4
    assert "numerical failure" in err and json.loads(out)["success"] is False


def test_fidelity_and_pmf(capsys):
    code, out, _ = run(capsys, "fidelity", "--params", 0.44, 8.7, 5.8e-3, 3.4e-3)
    doc = json.loads(out)
    assert code == 0 and doc["threshold"] == 3
    assert doc["fidelity"] == pytest.approx(0.896, abs=0.01)
    code, out, _ = run(capsys, "pmf", "--params", 0.44, 8.7, "inf", "inf", "--max-n", 30)
    rows = np.array([[float(x) for x in l.split(",")] for l in out.strip().splitlines()[1:]])
    assert code == 0 and rows.shape == (31, 3)
    assert np.allclose(rows[:, 1], poisson.pmf(rows[:, 0], 8.7), rtol=1e-12, atol=1e-300)
    assert np.allclose(rows[:, 2], poisson.pmf(rows[:, 0], 0.44), rtol=1e-12, atol=1e-300)
    assert run(capsys, "pmf", "--params", 2.0, 1.0, 1e-3, 1e-3)[0] == 2


def test_rabi_subcommands(tmp_path, capsys):
    code, out, _ = run(capsys, "rabi", "curve", "--points", 25, "--t-max", 1e-6)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "t_ns,p_bright" and len(lines) == 26
    assert float(lines[1].split(",")[1]) > 1 - 1e-9

    run(capsys, "--seed", 137, "--out", tmp_path, "rabi", "curve", "--shots", 1000)
    code, out, _ = run(capsys, "rabi", "fit", "--data", tmp_path / "rabi_curve.csv", "--shots", 1000)
    doc = json.loads(out)
    assert code == 0
    assert abs(doc["nbar"] - 14) <= 2 and abs(doc["omega_hz"] - 2.60e6) <= 0.01e6

    run(capsys, "--out", tmp_path, "rabi", "curve", "--points", 12, "--t-max", 1e-7)
    short = tmp_path / "rabi_curve.csv"  # under one oscillation period
    assert run(capsys, "rabi", "fit", "--data", short)[0] == 2

    code, out, _ = run(capsys, "rabi", "fidelity", "--shots", 300, "--seed", 1)
    assert code == 0 and 0.9 < json.loads(out)["p_transfer"] <= 1.0


def test_reproduce_exact_tolerance_fails(tmp_path, capsys):
    code, out, _ = run(capsys, "reproduce", "--tolerance-scale", 0, "--no-figures", "--out", tmp_path)
    assert code == 1
    assert "FAIL" in out
    assert json.loads((tmp_path / "summary.json").read_text())["all_pass"] is False


def test_reproduce_default(tmp_path, capsys):
    code, out, _ = run(capsys, "reproduce", "--out", tmp_path)
    assert code == 0, out
    for name in ("bright_histogram.csv", "dark_histogram.csv", "fit.json", "rabi_curve.csv",
                 "rabi_fit.json", "summary.json", "histograms.png", "rabi.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]
