from pathlib import Path
import numpy as np
import logging

from app.config import RunConfig
from app.models import ExitCode, ScenarioReport, Stepper
from app.scenarios.common import at_most, initial_density, scenario, write_json
from app.services.collision import CollisionOperator
from app.services.solver import Solver, l1_divergence_rate
from app.services.state import Density

logger = logging.getLogger(__name__)


@scenario("existence")
def run_existence(config: RunConfig, out_dir: Path) -> ScenarioReport:
    """Monotone existence iteration; its limit is compared with a Strang run of the same data"""
    operator = CollisionOperator.from_config(config)
    f0 = initial_density(config, operator.grid)
    result = Solver(operator, config.solver).existence_iteration(f0)
    strang_config = config.solver.model_copy(update={"stepper": Stepper.STRANG})
    reference = Solver(operator, strang_config).run(f0)
    distance = float(
        np.sum(np.abs(result.limit.densities[-1].values - reference.densities[-1].values)) * operator.grid.cell_volume
    )
    write_json(result.report, out_dir / "existence.json")
    criteria = [
        at_most("existence_converged", 0.0 if result.report.converged else 1.0, 0.0, ExitCode.SOLVER),
        at_most("existence_strang_l1", distance, config.criteria.existence_l1, ExitCode.SOLVER),
    ]
    return ScenarioReport(scenario="existence", criteria=criteria)


@scenario("contraction")
def run_contraction(config: RunConfig, out_dir: Path) -> ScenarioReport:
    """L1 distance growth between the initial data and a randomly perturbed copy; reported only"""
    rng = np.random.default_rng(config.seed)
    operator = CollisionOperator.from_config(config)
    f0 = initial_density(config, operator.grid)
    g0 = Density.normalized(f0.values * rng.uniform(0.9, 1.1, f0.values.shape), operator.grid)
    report = l1_divergence_rate(Solver(operator, config.solver), f0, g0)
    write_json(report, out_dir / "contraction.json")
    return ScenarioReport(scenario="contraction", message=f"rate {report.rate:.6e}, bound {report.bound:.6e}")
