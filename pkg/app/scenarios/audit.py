from pathlib import Path
from typing import Dict
import logging

from app.config import RunConfig
from app.models import AuditReport, ExitCode, ScenarioReport
from app.scenarios.common import at_least, at_most, initial_density, scenario, write_json
from app.services.collision import CollisionOperator
from app.services.diagnostics import DiagnosticsWriter
from app.services.dissipation import DissipationStructure
from app.services.solver import Solver
from app.services.variational import Trajectory, l_functional

logger = logging.getLogger(__name__)


def _audit_all(traj: Trajectory, operator: CollisionOperator, config: RunConfig, label: str) -> Dict[str, AuditReport]:
    return {
        f"{pair.value}/{label}": l_functional(traj, operator, DissipationStructure(psi_pair=pair))
        for pair in config.audit.structures
    }


@scenario("audit")
def run_audit(config: RunConfig, out_dir: Path) -> ScenarioReport:
    """
    L_T of the solver trajectory with its own flux, of rate-perturbed runs and of the
    stationary initial state without flux
    """
    operator = CollisionOperator.from_config(config)
    f0 = initial_density(config, operator.grid)
    solver_config = config.solver.model_copy(update={"record_flux": True})
    base_scale = solver_config.flux_scale

    with DiagnosticsWriter(out_dir / config.output.diagnostics_file) as writer:
        traj = Solver(operator, solver_config, config.dissipation, config.output, out_dir).run(f0, writer)
    audits = _audit_all(traj, operator, config, "true")

    for alpha in config.audit.perturbations:
        perturbed_config = solver_config.model_copy(update={"flux_scale": alpha * base_scale})
        perturbed = Solver(operator, perturbed_config, config.dissipation).run(f0)
        audits.update(_audit_all(perturbed, operator, config, f"x{alpha:g}"))

    if config.audit.zero_flux:
        audits.update(_audit_all(Trajectory.stationary(f0, traj.times), operator, config, "zero_flux"))

    criteria = []
    for key, report in audits.items():
        criteria.append(at_least(f"{key}:l_value", report.l_value, -report.tolerance, ExitCode.NEGATIVE_FUNCTIONAL))
    for pair in config.audit.structures:
        reference = audits[f"{pair.value}/true"].l_value
        criteria.append(at_most(f"{pair.value}/true:l_max", reference, config.audit.l_max, ExitCode.POSITIVITY_GAP))
        for alpha in config.audit.perturbations:
            value = audits[f"{pair.value}/x{alpha:g}"].l_value
            criteria.append(
                at_least(
                    f"{pair.value}/x{alpha:g}:gap",
                    value,
                    config.audit.gap_factor * max(reference, 0.0),
                    ExitCode.POSITIVITY_GAP,
                )
            )

    for key, report in audits.items():
        write_json(report, out_dir / "audit" / f"{key.replace('/', '_')}.json")
    return ScenarioReport(scenario="audit", criteria=criteria, audits=audits)
