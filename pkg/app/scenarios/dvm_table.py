from pathlib import Path
from typing import Optional
import logging

from app.config import RunConfig
from app.models import ExitCode, ScenarioReport
from app.scenarios.common import at_least, at_most, scenario
from app.services.geometry import build_dvm_table
from app.services.kernels import CollisionKernel
from app.services.state import PhaseGrid

logger = logging.getLogger(__name__)


@scenario("dvm_table")
def run_dvm_table(config: RunConfig, out_dir: Path, target: Optional[Path] = None) -> ScenarioReport:
    """Build the collision table for the configured lattice and cache it as text"""
    grid = PhaseGrid(**config.grid.model_dump())
    kernel = CollisionKernel(mu=config.kernels.mu, b0=config.kernels.b0, cap=config.solver.truncation_level)
    table = build_dvm_table(grid, kernel)
    path = table.save(Path(target) if target else out_dir / "dvm_table.txt")
    logger.info(f"DVM table with {len(table)} quadruples saved to {path}")
    criteria = [
        at_most("conservation_violations", table.conservation_violations(grid), 0, ExitCode.STRUCTURE_IDENTITY),
        at_least("swap_closed", 1.0 if table.swap_closed() else 0.0, 1.0, ExitCode.STRUCTURE_IDENTITY),
    ]
    return ScenarioReport(scenario="dvm_table", criteria=criteria, message=str(path))
