import numpy as np
import pytest

from app.config import SolverConfig
from app.errors import AuditError
from app.models import Provenance
from app.services.collision import ZeroFlux
from app.services.dissipation import DissipationStructure, entropy_dissipation_D
from app.services.solver import Solver
from app.services.state import Density, PhaseGrid, write_snapshot
from app.services.variational import (
    Trajectory,
    chain_rule_defect,
    chain_rule_residuals,
    entropy_rate,
    l_functional,
    tcre_residual,
)
from tests.conftest import random_density


@pytest.fixture
def solver_trajectory(tiny_dvm, rng):
    f0 = random_density(tiny_dvm.grid, rng, uniform=True)
    solver = Solver(tiny_dvm, SolverConfig(dt=0.01, t_end=0.1, record_flux=True))
    return solver.run(f0)


def test_stationary_equilibrium_has_zero_l(tiny_dvm):
    profile = np.exp(-0.5 * tiny_dvm.grid.v_squared())
    f = Density.normalized(np.broadcast_to(profile, tiny_dvm.grid.shape), tiny_dvm.grid)
    traj = Trajectory.stationary(f, [0.0, 0.5, 1.0])
    assert traj.provenance == Provenance.EXTERNAL
    for structure in (DissipationStructure.quadratic(), DissipationStructure.cosh()):
        report = l_functional(traj, tiny_dvm, structure)
        assert abs(report.l_value) <= 1e-14
        assert report.entropy_identity_defect is None
        assert report.infinite_at is None


def test_solver_trajectory_satisfies_the_rate_equation(tiny_dvm, solver_trajectory):
    assert tcre_residual(solver_trajectory, tiny_dvm, [np.ones(tiny_dvm.grid.shape)]) <= 1e-12
    assert tcre_residual(solver_trajectory, tiny_dvm) <= 1e-10
    assert chain_rule_defect(solver_trajectory, tiny_dvm) <= 1e-5


def test_solver_trajectory_has_small_l_and_perturbations_do_not(tiny_dvm, solver_trajectory):
    structure = DissipationStructure.quadratic()
    report = l_functional(solver_trajectory, tiny_dvm, structure)
    assert abs(report.l_value) <= 1e-4
    assert report.entropy_identity_defect is not None
    assert report.entropy_identity_defect <= 1e-4
    assert report.dissipation_integral > 0

    perturbed = l_functional(solver_trajectory.scaled(2.0), tiny_dvm, structure)
    assert perturbed.l_value > 10 * max(report.l_value, 0.0)
    # R grows quadratically with the flux for the quadratic pair
    assert perturbed.rate_integral == pytest.approx(4.0 * report.rate_integral, rel=1e-10)


def test_zero_flux_keeps_only_dissipation(tiny_dvm, solver_trajectory):
    report = l_functional(solver_trajectory.with_fluxes([ZeroFlux()] * 10), tiny_dvm, DissipationStructure.cosh())
    assert report.rate_integral == 0.0
    assert report.l_value == pytest.approx(report.delta_entropy + report.dissipation_integral)


def test_entropy_rate_matches_dissipation(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng)
    assert entropy_rate(tiny_dvm, f, tiny_dvm.true_flux(f)) == pytest.approx(
        -entropy_dissipation_D(tiny_dvm, f), rel=1e-10
    )


def test_trajectory_validation(tiny_grid, small_grid, rng):
    f = random_density(tiny_grid, rng)
    with pytest.raises(AuditError):
        Trajectory([f])
    with pytest.raises(AuditError):
        Trajectory([f.at(0.0), f.at(0.0)])
    with pytest.raises(AuditError):
        Trajectory([f.at(0.0), f.at(1.0)], [ZeroFlux(), ZeroFlux()])
    with pytest.raises(AuditError):
        Trajectory([f.at(0.0), random_density(small_grid, rng).at(1.0)])


def test_trajectory_flux_density(tiny_grid, rng):
    f = random_density(tiny_grid, rng)
    g = random_density(tiny_grid, rng).at(1.0)
    traj = Trajectory([f, g])
    assert np.allclose(traj.flux_density(0).values, 0.5 * (f.values + g.values))
    assert traj.flux_density(0).time == 0.5


def test_external_trajectory_from_snapshots(tmp_path, tiny_dvm, rng):
    grid: PhaseGrid = tiny_dvm.grid
    paths = [
        write_snapshot(tmp_path / f"f{n}.csv", random_density(grid, rng, uniform=True).at(0.1 * n))
        for n in range(3)
    ]
    traj = Trajectory.load(paths)
    assert traj.provenance == Provenance.EXTERNAL
    assert np.allclose(traj.times, [0.0, 0.1, 0.2])
    report = l_functional(traj, tiny_dvm, DissipationStructure.quadratic())
    assert report.entropy_identity_defect is None
    assert report.rate_integral == 0.0


@pytest.mark.parametrize("structure", [DissipationStructure.quadratic(), DissipationStructure.cosh()])
def test_l_is_bounded_below_by_the_chain_rule_residuals(tiny_dvm, solver_trajectory, structure):
    report = l_functional(solver_trajectory, tiny_dvm, structure)
    residuals = chain_rule_residuals(solver_trajectory, tiny_dvm)
    assert report.tolerance == pytest.approx(np.sum(np.abs(residuals)) + 1e-10, rel=1e-12)
    assert report.l_value >= np.sum(residuals) - 1e-13
    assert report.l_value >= -report.tolerance
    assert report.chain_rule_defect == pytest.approx(np.max(np.abs(residuals)), rel=1e-12)


def uniform_run(operator, f0, dt, t_end=0.2):
    return Solver(operator, SolverConfig(dt=dt, t_end=t_end, record_flux=True)).run(f0)


@pytest.fixture
def refined_runs(tiny_dvm, rng):
    f0 = random_density(tiny_dvm.grid, rng, uniform=True)
    return [uniform_run(tiny_dvm, f0, dt) for dt in (0.02, 0.01)]


def test_rate_equation_residual_is_second_order(tiny_dvm, refined_runs):
    grid = tiny_dvm.grid
    phi = [np.broadcast_to(grid.v_nodes()[:, 0] ** 2, grid.shape).copy()]
    coarse, fine = (tcre_residual(traj, tiny_dvm, phi) for traj in refined_runs)
    assert fine > 0
    assert coarse / fine >= 3.5


def test_chain_rule_defect_is_second_order(tiny_dvm, refined_runs):
    coarse, fine = (chain_rule_defect(traj, tiny_dvm) for traj in refined_runs)
    assert fine > 0
    assert coarse / fine >= 3.5


def test_entropy_identity_defect_is_second_order(tiny_dvm, rng):
    f0 = random_density(tiny_dvm.grid, rng, uniform=True)
    structure = DissipationStructure.quadratic()
    coarse, fine = (
        l_functional(uniform_run(tiny_dvm, f0, dt), tiny_dvm, structure).entropy_identity_defect
        for dt in (0.01, 0.005)
    )
    assert fine > 0
    assert coarse / fine >= 3.5


def test_l_of_the_true_trajectory_is_second_order(tiny_dvm, refined_runs):
    structure = DissipationStructure.quadratic()
    coarse, fine = (abs(l_functional(traj, tiny_dvm, structure).l_value) for traj in refined_runs)
    assert fine > 0
    assert coarse / fine >= 3.5
