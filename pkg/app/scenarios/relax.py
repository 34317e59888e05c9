from pathlib import Path
import numpy as np
import logging

from app.config import RunConfig
from app.models import ExitCode, ScenarioReport
from app.scenarios.common import at_most, initial_density, scenario
from app.services.collision import CollisionOperator
from app.services.diagnostics import DiagnosticsWriter
from app.services.generic import energy_E
from app.services.solver import Solver
from app.services.state import matched_maxwellian, moments, relative_entropy
from app.services.variational import Trajectory

logger = logging.getLogger(__name__)


def drift(values: np.ndarray) -> float:
    """max |x_n - x_0| / max(|x_0|, 1)"""
    values = np.asarray(values, dtype=float)
    scale = np.maximum(np.abs(values[0]), 1.0)
    return float(np.max(np.abs(values - values[0]) / scale))


def relaxation_criteria(traj: Trajectory, config: RunConfig) -> list:
    limits = config.criteria
    equilibrium = matched_maxwellian(traj.densities[0])
    final = traj.densities[-1]
    distance = float(np.sum(np.abs(final.values - equilibrium.values)) * traj.grid.cell_volume)
    relative = np.array([relative_entropy(f, equilibrium) for f in traj.densities])
    increase = float(np.max(np.diff(relative))) if len(relative) > 1 else 0.0
    return [
        at_most("relaxation_l1", distance, limits.relaxation_l1, ExitCode.RELAXATION),
        at_most("relative_entropy_increase", increase, limits.entropy_slack, ExitCode.RELAXATION),
    ]


def conservation_criteria(traj: Trajectory, config: RunConfig) -> list:
    limits = config.criteria
    reports = [moments(f) for f in traj.densities]
    mass = np.array([r.mass for r in reports])
    momentum = np.array([r.momentum for r in reports])
    energy = np.array([energy_E(f) for f in traj.densities])
    entropy = np.array([r.entropy for r in reports])
    return [
        at_most("mass_drift", drift(mass), limits.mass_drift, ExitCode.CONSERVATION),
        at_most("momentum_drift", max(drift(momentum[:, a]) for a in range(momentum.shape[1])), limits.conservation_drift, ExitCode.CONSERVATION),
        at_most("energy_drift", drift(energy), limits.conservation_drift, ExitCode.CONSERVATION),
        at_most("entropy_increase", float(np.max(np.diff(entropy))), limits.entropy_slack, ExitCode.H_THEOREM),
    ]


@scenario("relax")
def run_relax(config: RunConfig, out_dir: Path) -> ScenarioReport:
    """Relaxation from the configured initial data; conservation and H-theorem are asserted"""
    operator = CollisionOperator.from_config(config)
    f0 = initial_density(config, operator.grid)
    solver = Solver(operator, config.solver, config.dissipation, config.output, out_dir)
    with DiagnosticsWriter(out_dir / config.output.diagnostics_file) as writer:
        traj = solver.run(f0, writer)

    criteria = conservation_criteria(traj, config)
    if config.criteria.check_relaxation:
        criteria += relaxation_criteria(traj, config)
    return ScenarioReport(scenario="relax", criteria=criteria)
