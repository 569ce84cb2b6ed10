import csv
import json
import math
import os

import pytest

from dampwave.cli import main, replay, run, sha256_bytes
from dampwave.errors import ReproducibilityError

SIMULATE = """[domain]
N = 1
[family]
name = zero
[solver]
dt = 0.001
horizon = 5
record_every = 500
[experiment]
kind = simulate
u0 = 1.0
"""

METRIC_SAME = """[family]
eps = 0.5
phases = 0.0, 0.0
[experiment]
kind = metric
metric_grid = 256
metric_i_max = 6
"""


def closed_form(t):
    w = math.sqrt(3) / 2
    return math.exp(-t / 2) * (math.cos(w * t) + math.sin(w * t) / math.sqrt(3))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.fixture
def sim_run(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, "sim.ini", SIMULATE)), "--out-dir", str(out)]) == 0
    return out


def test_simulate_closed_form(sim_run):
    with open(sim_run / "series_0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["time"]) for r in rows] == [0.5 * k for k in range(11)]
    for r in rows:
        assert float(r["u_1"]) == pytest.approx(closed_form(float(r["time"])), rel=1e-6)
    report = json.loads((sim_run / "report.json").read_text())
    assert report["passed"] and report["experiment"] == "simulate"


def test_manifest_contents(sim_run):
    m = json.loads((sim_run / "manifest.json").read_text())
    assert m["config_file"] == "config.ini" and m["seed"] == 42
    assert set(m["files"]) >= {"report.json", "series_0.csv"}
    assert {"python", "numpy", "scipy"} <= set(m["versions"])


def test_replay_identical(sim_run, capsys):
    assert main(["replay", str(sim_run / "manifest.json")]) == 0
    assert "identical" in capsys.readouterr().out


def test_replay_other_seed(sim_run):
    assert main(["replay", str(sim_run / "manifest.json"), "--seed", "3"]) == 4


def test_replay_rejects_edited_config(sim_run):
    cfg = sim_run / "config.ini"
    cfg.write_text(cfg.read_text().replace("dt = 0.001", "dt = 0.002"))
    with pytest.raises(ReproducibilityError):
        replay(sim_run / "manifest.json")
    assert main(["replay", str(sim_run / "manifest.json")]) == 1


def test_replay_detects_tampered_output(sim_run):
    series = sim_run / "series_0.csv"
    lines = series.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[1], "0.5", 1)
    series.write_text("\n".join(lines) + "\n")
    # a recorded run whose output genuinely differs: file and digest both changed
    mpath = sim_run / "manifest.json"
    m = json.loads(mpath.read_text())
    m["files"]["series_0.csv"] = sha256_bytes(series.read_bytes())
    mpath.write_text(json.dumps(m))
    with pytest.raises(ReproducibilityError, match="series_0.csv diverged at line 3, field 1"):
        replay(sim_run / "manifest.json")


def test_seed_override_recorded(tmp_path):
    out = tmp_path / "o"
    assert run(SIMULATE, out, seed=9) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 9
    assert replay(out / "manifest.json").status == "identical"


def test_metric_same_symbol_zero(tmp_path):
    out = tmp_path / "m"
    assert main(["run", str(write(tmp_path, "m.ini", METRIC_SAME)), "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    dists = [c for c in report["checks"] if c["name"] == "metric_identity"]
    assert dists and all(c["passed"] for c in dists)


def test_config_error_exit(tmp_path, capsys):
    p = write(tmp_path, "bad.ini", "[solver]\ndt = 0.01\nstep = 1\n")
    assert main(["run", str(p), "--out-dir", str(tmp_path / "x")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_experiment_error_exit(tmp_path, capsys):
    text = SIMULATE.replace("name = zero", "name = builtin\nkappa = 3.9\ng = 0, 40") \
                   .replace("horizon = 5", "horizon = 20\nblowup_ceiling = 10")
    assert main(["run", str(write(tmp_path, "b.ini", text)), "--out-dir", str(tmp_path / "b")]) == 3
    assert "simulate" in capsys.readouterr().err


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    out = capsys.readouterr().out.split()
    for name in ("simulate", "diagnose", "split", "attractor", "semicontinuity", "metric"):
        assert name in out


def test_env_out_dir(tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv("DAMPWAVE_OUT_DIR", str(target))
    assert main(["run", str(write(tmp_path, "s.ini", SIMULATE))]) == 0
    assert (target / "manifest.json").exists()


def test_threads_do_not_change_outputs(tmp_path):
    text = SIMULATE.replace("N = 1", "N = 4").replace("u0 = 1.0", "u0 = 1.0, 0.5, 0.25")
    p = write(tmp_path, "t.ini", text)
    assert main(["run", str(p), "--out-dir", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["run", str(p), "--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    for name in os.listdir(tmp_path / "a"):
        if name != "manifest.json":
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
