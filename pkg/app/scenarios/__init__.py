from .relax import run_relax
from .audit import run_audit
from .structure_check import run_structure_check
from .existence import run_existence, run_contraction
from .plot_data import run_plot_data
from .dvm_table import run_dvm_table

SCENARIOS = {
    "relax": run_relax,
    "audit": run_audit,
    "structure_check": run_structure_check,
    "existence": run_existence,
    "contraction": run_contraction,
    "plot_data": run_plot_data,
    "dvm_table": run_dvm_table,
}

__all__ = ["SCENARIOS", "run_relax", "run_audit", "run_structure_check", "run_existence", "run_contraction", "run_plot_data", "run_dvm_table"]
