from typing import Callable, Optional
from functools import wraps
from pathlib import Path
import json
import logging

from app.config import RunConfig
from app.errors import ConfigError, DiagnosticsError, FuzzyBoltzmannError, SolverError
from app.models import CriterionResult, ExitCode, InitialKind, ScenarioReport
from app.services.state import Density, PhaseGrid, maxwellian, two_bump

logger = logging.getLogger(__name__)


def exit_code_for(error: FuzzyBoltzmannError) -> ExitCode:
    if isinstance(error, ConfigError):
        return ExitCode.CONFIG
    if isinstance(error, SolverError):
        return ExitCode.SOLVER
    if isinstance(error, DiagnosticsError):
        return ExitCode.MALFORMED_STREAM
    return ExitCode.FAILURE


def scenario(name: str) -> Callable:
    """
    Wrap a scenario function: toolkit errors are logged and turned into a report whose
    exit code names the failure; otherwise the first failed criterion decides the code
    """

    def decorate(func: Callable[..., ScenarioReport]) -> Callable[..., ScenarioReport]:
        @wraps(func)
        def run(config: RunConfig, out_dir: Path, **options) -> ScenarioReport:
            logger.info(f"Scenario {name} started, output in {out_dir}")
            try:
                report = func(config, Path(out_dir), **options)
            except FuzzyBoltzmannError as e:
                logger.error(f"Scenario {name} failed: {e}")
                return ScenarioReport(scenario=name, exit_code=exit_code_for(e), message=str(e))
            failed = [c for c in report.criteria if not c.passed]
            if failed and report.exit_code == ExitCode.OK:
                report.exit_code = failed[0].exit_code
            for c in failed:
                logger.error(f"Criterion {c.name} violated: {c.value:.6e} (threshold {c.threshold:.6e})")
            logger.info(f"Scenario {name} finished with exit code {int(report.exit_code)}")
            return report

        return run

    return decorate


def at_most(name: str, value: float, threshold: float, code: ExitCode) -> CriterionResult:
    return CriterionResult(name=name, passed=bool(value <= threshold), value=float(value), threshold=threshold, exit_code=code)


def at_least(name: str, value: float, threshold: float, code: ExitCode) -> CriterionResult:
    return CriterionResult(name=name, passed=bool(value >= threshold), value=float(value), threshold=threshold, exit_code=code)


def initial_density(config: RunConfig, grid: Optional[PhaseGrid] = None) -> Density:
    grid = grid or PhaseGrid(**config.grid.model_dump())
    initial = config.initial
    if initial.kind == InitialKind.MAXWELLIAN:
        mean = list(initial.mean_velocity)[: grid.d] + [0.0] * max(0, grid.d - len(initial.mean_velocity))
        return maxwellian(grid, mean, initial.temperature)
    return two_bump(grid, initial.bump_velocity, initial.temperature, initial.spatial_amplitude)


def write_json(data, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if hasattr(data, "model_dump"):
        data = data.model_dump(mode="json")
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    return path
