"""Multiple imputation by chained equations with posterior predictive checks."""

from .data import Column, ColumnKind, Dataset, RngStream, load_csv, write_csv
from .amputation import AmputePattern, AmputeSpec, Mechanism, ampute, compute_wss
from .imputers import ImputerSpec, MethodName
from .engine import EngineConfig, MultiplyImputed, PpcMode, run_fcs, where_all_observed
from .ppc import cell_diagnostics, deviance_summary, p_b_com, p_b_ecom, ppc_pvalue
from .plots import emit_density_data, emit_deviance_plot, emit_distribution_plot, emit_scatter_data

__version__ = "0.1.0"
