import numpy as np
import pytest

from app.errors import DiagnosticsError
from app.models import DiagnosticsRecord
from app.services.diagnostics import SCALAR_FIELDS, DiagnosticsWriter, build_record, emit_plot_data, read_diagnostics
from app.services.dissipation import DissipationStructure
from tests.conftest import random_density


def test_build_record(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng, uniform=True)
    record = build_record(
        tiny_dvm,
        f,
        3,
        DissipationStructure.quadratic(),
        flux=tiny_dvm.true_flux(f),
        degeneracy=True,
    )
    assert record.step == 3
    assert record.mass == pytest.approx(1.0, abs=1e-12)
    assert len(record.momentum) == 2
    assert record.d_psi_star == pytest.approx(0.5 * record.dissipation, rel=1e-12)
    assert record.flux_rate == pytest.approx(record.d_psi_star, rel=1e-12)
    assert record.norm_m_de <= 1e-12
    assert record.relative_entropy is None


def test_record_with_reference(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng)
    record = build_record(tiny_dvm, f, 0, DissipationStructure.cosh(), reference=f)
    assert record.relative_entropy == pytest.approx(0.0, abs=1e-14)


def test_writer_and_reader(tmp_path, tiny_dvm, rng):
    structure = DissipationStructure.quadratic()
    path = tmp_path / "run" / "diagnostics.jsonl"
    with DiagnosticsWriter(path) as writer:
        for step in range(3):
            f = random_density(tiny_dvm.grid, rng).at(0.1 * step)
            writer.write(build_record(tiny_dvm, f, step, structure))
    assert writer.count == 3
    records = read_diagnostics(path)
    assert [r.step for r in records] == [0, 1, 2]
    assert records[2].time == pytest.approx(0.2)


def test_infinite_values_survive_the_stream(tmp_path):
    record = DiagnosticsRecord(
        step=0, time=0.0, mass=1.0, momentum=[0.0, 0.0], energy=1.0, entropy=-1.0,
        dissipation=0.5, d_psi_star=float("inf"), e22=2.0, e0q=2.0,
    )
    path = tmp_path / "diagnostics.jsonl"
    with DiagnosticsWriter(path) as writer:
        writer.write(record)
    assert read_diagnostics(path)[0].d_psi_star == np.inf


def test_malformed_stream_reports_the_line(tmp_path):
    record = DiagnosticsRecord(
        step=0, time=0.0, mass=1.0, momentum=[0.0, 0.0], energy=1.0, entropy=-1.0,
        dissipation=0.5, d_psi_star=0.25, e22=2.0, e0q=2.0,
    )
    path = tmp_path / "diagnostics.jsonl"
    path.write_text(record.model_dump_json() + "\n" + '{"step": "x"}\n')
    with pytest.raises(DiagnosticsError) as excinfo:
        read_diagnostics(path)
    assert excinfo.value.line == 2
    with pytest.raises(DiagnosticsError):
        read_diagnostics(tmp_path / "missing.jsonl")


def test_plot_data_from_empty_stream(tmp_path):
    source = tmp_path / "empty.jsonl"
    source.write_text("")
    written = emit_plot_data(source, tmp_path / "plots")
    assert len(written) == len(SCALAR_FIELDS) + 2
    assert (tmp_path / "plots" / "mass.csv").read_text() == "time,mass\n"
    assert (tmp_path / "plots" / "momentum_1.csv").read_text() == "time,momentum_1\n"


def test_plot_data_tables(tmp_path, tiny_dvm, rng):
    path = tmp_path / "diagnostics.jsonl"
    f = random_density(tiny_dvm.grid, rng)
    with DiagnosticsWriter(path) as writer:
        writer.write(build_record(tiny_dvm, f, 0, DissipationStructure.quadratic(), reference=random_density(tiny_dvm.grid, rng)))
        writer.write(build_record(tiny_dvm, f.at(0.5), 1, DissipationStructure.quadratic()))
    emit_plot_data(path, tmp_path / "plots")
    lines = (tmp_path / "plots" / "relative_entropy.csv").read_text().splitlines()
    assert lines[0] == "time,relative_entropy"
    assert len(lines) == 3
    assert lines[2] == "0.5,"
    assert float(lines[1].split(",")[1]) > 0
