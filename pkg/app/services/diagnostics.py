from typing import Dict, List, Optional, Union
from pathlib import Path
from pydantic import ValidationError
import numpy as np
import logging

from app.errors import DiagnosticsError, StateError
from app.models import DiagnosticsRecord
from app.services.collision import CollisionFlux, CollisionOperator
from app.services.dissipation import DissipationStructure, big_R, d_psi_star, entropy_dissipation_D
from app.services.generic import degeneracy_report, energy_E
from app.services.state import Density, moments, relative_entropy

logger = logging.getLogger(__name__)

SCALAR_FIELDS = [
    "mass",
    "energy",
    "entropy",
    "relative_entropy",
    "dissipation",
    "d_psi_star",
    "flux_rate",
    "e22",
    "e0q",
    "norm_l_ds",
    "norm_m_de",
]


def build_record(
    operator: CollisionOperator,
    f: Density,
    step: int,
    structure: DissipationStructure,
    flux: Optional[CollisionFlux] = None,
    flux_density: Optional[Density] = None,
    reference: Optional[Density] = None,
    degeneracy: bool = False,
) -> DiagnosticsRecord:
    """
    One diagnostics record for the density after `step` steps

    Args:
        flux: recorded flux of the interval ending at this step; enables flux_rate
        flux_density: density the flux is evaluated at, defaults to f
        reference: equilibrium for the relative_entropy column
        degeneracy: add the GENERIC degeneracy norms (needs f > 0)
    """
    mu = operator.kernel.mu if operator.kernel is not None else 0.0
    base = moments(f, 2.0, 2.0)
    record = DiagnosticsRecord(
        step=step,
        time=f.time,
        mass=base.mass,
        momentum=base.momentum,
        energy=energy_E(f),
        entropy=base.entropy,
        dissipation=entropy_dissipation_D(operator, f),
        d_psi_star=d_psi_star(operator, f, structure),
        e22=base.e_pq,
        e0q=moments(f, 0.0, 2.0 + max(mu, 0.0)).e_pq,
    )
    if reference is not None:
        try:
            record.relative_entropy = relative_entropy(f, reference)
        except StateError as e:
            logger.warning(f"Relative entropy skipped at step {step}: {e}")
    if flux is not None:
        record.flux_rate = big_R(operator, flux_density if flux_density is not None else f, flux, structure)
    if degeneracy:
        if np.all(f.values > 0):
            report = degeneracy_report(operator, f)
            record.norm_l_ds = report.norm_l_ds
            record.norm_m_de = report.norm_m_de
        else:
            logger.debug(f"Degeneracy norms skipped at step {step}: density has zeros")
    return record


class DiagnosticsWriter:
    """Appends one JSON record per line; usable as a context manager"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w")
        self.count = 0

    def write(self, record: DiagnosticsRecord) -> None:
        self._handle.write(record.model_dump_json() + "\n")
        self.count += 1

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()
            logger.info(f"Wrote {self.count} diagnostics records to {self.path}")

    def __enter__(self) -> "DiagnosticsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_diagnostics(path: Union[str, Path]) -> List[DiagnosticsRecord]:
    path = Path(path)
    if not path.exists():
        raise DiagnosticsError(f"Diagnostics stream not found: {path}")
    records = []
    with path.open() as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(DiagnosticsRecord.model_validate_json(line))
            except ValidationError as e:
                raise DiagnosticsError(f"not a diagnostics record ({e.error_count()} errors)", line=number) from e
    return records


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def emit_plot_data(path: Union[str, Path], out_dir: Union[str, Path], dimension: int = 2) -> List[Path]:
    """
    Convert a diagnostics stream into one `time,<quantity>` CSV per quantity

    Momentum components go to momentum_0.csv, momentum_1.csv, ... An empty stream gives
    header-only tables, with `dimension` momentum components.
    """
    records = read_diagnostics(path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if records:
        dimension = len(records[0].momentum)
    columns: Dict[str, List[str]] = {name: [] for name in SCALAR_FIELDS}
    columns.update({f"momentum_{a}": [] for a in range(dimension)})
    for record in records:
        time = repr(float(record.time))
        for name in SCALAR_FIELDS:
            columns[name].append(f"{time},{_cell(getattr(record, name))}")
        for a in range(dimension):
            columns[f"momentum_{a}"].append(f"{time},{_cell(record.momentum[a])}")

    written = []
    for name, rows in columns.items():
        target = out_dir / f"{name}.csv"
        target.write_text("\n".join([f"time,{name}"] + rows) + "\n")
        written.append(target)
    logger.info(f"Plot data: {len(written)} tables with {len(records)} rows each in {out_dir}")
    return written
