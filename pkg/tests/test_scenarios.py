import json

import pytest

from app.config import load_config
from app.errors import ConfigError, DiagnosticsError, KernelError, SolverError
from app.models import ExitCode, ScenarioReport
from app.scenarios import SCENARIOS
from app.scenarios.common import at_least, at_most, exit_code_for, initial_density, scenario
from app.scenarios.structure_check import poisson_refinement_ratio, refinement_grids, structure_config
from app.services.state import PhaseGrid


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("bad"), ExitCode.CONFIG),
        (SolverError("bad"), ExitCode.SOLVER),
        (DiagnosticsError("bad"), ExitCode.MALFORMED_STREAM),
        (KernelError("bad"), ExitCode.FAILURE),
    ],
)
def test_exit_code_for(error, code):
    assert exit_code_for(error) == code


def test_scenario_turns_errors_into_reports(tmp_path):
    @scenario("broken")
    def broken(config, out_dir):
        raise SolverError("step 3 produced NaN", 3)

    report = broken(load_config(), tmp_path)
    assert report.exit_code == ExitCode.SOLVER
    assert "NaN" in report.message


def test_first_failed_criterion_decides_the_exit_code(tmp_path):
    @scenario("checks")
    def checks(config, out_dir):
        return ScenarioReport(
            scenario="checks",
            criteria=[
                at_most("fine", 1.0, 2.0, ExitCode.CONSERVATION),
                at_least("gap", 0.5, 1.0, ExitCode.POSITIVITY_GAP),
                at_most("drift", 3.0, 1.0, ExitCode.CONSERVATION),
            ],
        )

    report = checks(load_config(), tmp_path)
    assert report.exit_code == ExitCode.POSITIVITY_GAP


def test_initial_density_kinds():
    config = load_config(overrides=["grid.nx=2", "initial.kind=maxwellian", "initial.temperature=0.25"])
    f = initial_density(config)
    assert f.grid.nx == 2
    assert f.mass == pytest.approx(1.0, abs=1e-12)


def test_dvm_table_scenario(tmp_path):
    config = load_config(overrides=["grid.torus_side=2.0", "grid.nx=2", "grid.vmax=1.5", "grid.nv=3"])
    target = tmp_path / "table.txt"
    report = SCENARIOS["dvm_table"](config, tmp_path, target=target)
    assert report.exit_code == ExitCode.OK
    assert all(c.passed for c in report.criteria)
    assert target.exists()


def test_existence_scenario(tmp_path):
    config = load_config(
        overrides=["grid.nx=2", "grid.vmax=4.0", "grid.nv=8", "solver.dt=0.0025", "solver.t_end=0.05"]
    )
    report = SCENARIOS["existence"](config, tmp_path)
    converged = next(c for c in report.criteria if c.name == "existence_converged")
    assert converged.passed
    summary = json.loads((tmp_path / "existence.json").read_text())
    assert summary["converged"]
    assert summary["max_mass"] <= 1.0 + 1e-12


def test_audit_scenario(tmp_path):
    config = load_config(overrides=["solver.t_end=0.1", "audit.perturbations=[0.5, 2.0]"])
    report = SCENARIOS["audit"](config, tmp_path)
    assert set(report.audits) >= {"quadratic/true", "cosh/true", "quadratic/x2", "cosh/x0.5", "cosh/zero_flux"}
    for criterion in report.criteria:
        if criterion.name.endswith(":l_value") or criterion.name.endswith(":l_max"):
            assert criterion.passed, criterion.name
    for pair in ("quadratic", "cosh"):
        true = report.audits[f"{pair}/true"]
        assert true.l_value >= -true.tolerance
        assert report.audits[f"{pair}/x2"].l_value > true.l_value
    assert (tmp_path / "audit" / "cosh_true.json").exists()


def test_structure_check_scenario(tmp_path):
    config = load_config(overrides=["criteria.n_random=2"])
    report = SCENARIOS["structure_check"](config, tmp_path)
    criteria = {c.name: c for c in report.criteria}
    for name in ("norm_m_de", "ds_m_ds_equals_d", "m_symmetry", "m_psd", "l_antisymmetry", "d_psi_star_half_d"):
        assert criteria[name].passed, name
    assert criteria["l_ds_refinement_ratio"].passed
    assert report.exit_code == ExitCode.OK
    assert (tmp_path / "structure_check.json").exists()


@pytest.mark.parametrize("d", [2, 3])
def test_poisson_refinement_ratio_on_the_default_box(d):
    grid = PhaseGrid(d=d, torus_side=4.0, nx=8, vmax=4.0, nv=16)
    coarse, fine = refinement_grids(grid)
    assert coarse.dv <= 0.25 and fine.nv == 2 * coarse.nv
    assert poisson_refinement_ratio(grid) >= 3.5


def test_structure_config_uses_the_smaller_grid():
    config = load_config()
    assert structure_config(config).grid.nv == config.criteria.structure_nv
    kept = load_config(overrides=["criteria.structure_nx=null", "criteria.structure_nv=null"])
    assert structure_config(kept).grid == kept.grid
