import json

import pytest

from app.main import main

TINY_RUN = [
    "--override", "grid.nx=2",
    "--override", "grid.vmax=4.0",
    "--override", "grid.nv=8",
    "--override", "solver.dt=0.01",
    "--override", "solver.t_end=0.05",
    "--override", "criteria.check_relaxation=false",
]


@pytest.fixture
def relax_dir(tmp_path):
    out = tmp_path / "relax"
    assert main(["run", *TINY_RUN, "--out", str(out)]) == 0
    return out


def test_relax_run(relax_dir):
    report = json.loads((relax_dir / "relax_report.json").read_text())
    assert report["exit_code"] == 0
    assert all(c["passed"] for c in report["criteria"])
    config = json.loads((relax_dir / "config.json").read_text())
    assert config["grid"]["nv"] == 8
    lines = (relax_dir / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 6


def test_plot_data_from_a_run(relax_dir, tmp_path):
    out = tmp_path / "plots"
    assert main(["plot-data", str(relax_dir / "diagnostics.jsonl"), "--out", str(out)]) == 0
    rows = (out / "plot_data" / "mass.csv").read_text().splitlines()
    assert rows[0] == "time,mass"
    assert len(rows) == 7


def test_invalid_configuration_exits_with_2(tmp_path):
    assert main(["run", "--override", "grid.d=7", "--out", str(tmp_path)]) == 2
    assert main(["run", "--override", "scenario=bogus", "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 2


def test_malformed_stream_exits_with_50(tmp_path):
    stream = tmp_path / "bad.jsonl"
    stream.write_text("not json\n")
    assert main(["plot-data", str(stream), "--out", str(tmp_path)]) == 50
    report = json.loads((tmp_path / "plot_data_report.json").read_text())
    assert "line 1" in report["message"]


def test_relax_checks_relaxation_by_default(tmp_path):
    out = tmp_path / "short"
    assert main(["run", *TINY_RUN[:-2], "--out", str(out)]) == 12
    report = json.loads((out / "relax_report.json").read_text())
    criteria = {c["name"]: c for c in report["criteria"]}
    assert not criteria["relaxation_l1"]["passed"]
    assert criteria["relative_entropy_increase"]["passed"]
    assert criteria["energy_drift"]["passed"]
