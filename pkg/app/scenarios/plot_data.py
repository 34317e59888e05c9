from pathlib import Path
from typing import Optional
import logging

from app.config import RunConfig
from app.models import ScenarioReport
from app.scenarios.common import scenario
from app.services.diagnostics import emit_plot_data

logger = logging.getLogger(__name__)


@scenario("plot_data")
def run_plot_data(config: RunConfig, out_dir: Path, source: Optional[Path] = None) -> ScenarioReport:
    """Per-quantity CSV tables from a diagnostics stream (by default the configured one)"""
    source = Path(source) if source else Path(config.output.out_dir) / config.output.diagnostics_file
    tables = emit_plot_data(source, out_dir / "plot_data", dimension=config.grid.d)
    return ScenarioReport(scenario="plot_data", message=f"{len(tables)} tables from {source}")
