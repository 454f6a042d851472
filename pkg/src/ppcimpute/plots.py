"""Plot-ready tables for distribution, density, scatter and deviance plots.

Nothing is rendered here. Each ``emit_*`` function writes a CSV with a fixed
header and returns the rows it wrote, so callers can check or render them
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_rows
from .engine import MultiplyImputed
from .ppc import DevianceResult, PpcReport

DISTRIBUTION_HEADER = ("rank", "mean", "lo", "hi", "obs", "covered")
DENSITY_HEADER = ("series", "grid_x", "density")
SCATTER_HEADER = ("panel", "origin", "x", "y")
DEVIANCE_HEADER = ("index", "p_hat", "residual")

GRID_POINTS = 512


class PlotDataError(ValueError):
    pass


@dataclass(frozen=True)
class DistributionPlotRow:
    rank: int
    rep_mean: float
    lo: float
    hi: float
    observed: float
    covered: bool

    def row(self) -> tuple:
        return (self.rank, self.rep_mean, self.lo, self.hi, self.observed, self.covered)


def distribution_rows(report: PpcReport, variable: str) -> list[DistributionPlotRow]:
    """Observed cells ranked by ascending replicate mean (stable on ties)."""
    if variable not in report.cells:
        raise PlotDataError(f"variable {variable!r} not in report")
    t = report.cells[variable]
    order = np.argsort(t.rep_mean, kind="stable")
    return [
        DistributionPlotRow(r + 1, float(t.rep_mean[k]), float(t.lo[k]), float(t.hi[k]),
                            float(t.observed[k]), bool(t.covered[k]))
        for r, k in enumerate(order)
    ]


def emit_distribution_plot(report: PpcReport, variable: str, path: str | Path) -> list[DistributionPlotRow]:
    rows = distribution_rows(report, variable)
    write_rows(path, DISTRIBUTION_HEADER, (r.row() for r in rows))
    return rows


def rank_deciles(rows: list[DistributionPlotRow]) -> np.ndarray:
    """Decile (0..9) of each row's rank."""
    n = len(rows)
    ranks = np.array([r.rank for r in rows])
    return np.minimum((10 * (ranks - 1)) // max(n, 1), 9)


# -- densities ----------------------------------------------------------------

def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back like R's bw.nrd0."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise PlotDataError("need at least two values for a bandwidth")
    sd = x.std(ddof=1)
    q75, q25 = np.quantile(x, [0.75, 0.25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd or abs(x[0]) or 1.0
    return 0.9 * spread * x.size ** -0.2


def gaussian_kde(x: np.ndarray, grid: np.ndarray, bw: float) -> np.ndarray:
    z = (grid[:, None] - np.asarray(x, dtype=float)[None, :]) / bw
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * bw * np.sqrt(2 * np.pi))


def density_series(result: MultiplyImputed, variable: str, grid_points: int = GRID_POINTS):
    """Observed values (series 0) and per-imputation drawn values (1..m).

    Drawn values are the replicates of the observed cells when the run
    replicated this variable, otherwise the imputations of its missing cells.
    Returns (grid, list of series arrays, density matrix).
    """
    col = result.data[variable]
    if col.kind.value != "continuous":
        raise PlotDataError(f"{variable!r} is not continuous")
    series = [col.values[col.observed]]
    if variable in result.replicates:
        series += list(result.replicates[variable].draws)
    else:
        miss = ~col.observed
        series += [d[variable].values[miss] for d in result.completed]
    for k, s in enumerate(series):
        if s.size < 2:
            raise PlotDataError(f"series {k} of {variable!r} has fewer than 2 values")
    bws = [silverman_bandwidth(s) for s in series]
    pooled = np.concatenate(series)
    pad = 3 * max(bws)
    grid = np.linspace(pooled.min() - pad, pooled.max() + pad, grid_points)
    dens = np.array([gaussian_kde(s, grid, bw) for s, bw in zip(series, bws)])
    return grid, series, dens


def emit_density_data(result: MultiplyImputed, variable: str, path: str | Path,
                      grid_points: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    grid, _, dens = density_series(result, variable, grid_points)
    write_rows(path, DENSITY_HEADER, (
        (k, float(g), float(v)) for k in range(dens.shape[0]) for g, v in zip(grid, dens[k])
    ))
    return grid, dens


# -- scatter ------------------------------------------------------------------

def scatter_rows(result: MultiplyImputed, x_var: str, y_var: str) -> list[tuple]:
    """Panel 0: rows with both variables observed. Panel k: completed dataset k,
    with origin 1 where either value was imputed."""
    for v in (x_var, y_var):
        if v not in result.data:
            raise PlotDataError(f"unknown variable {v!r}")
    xo, yo = result.data[x_var].observed, result.data[y_var].observed
    both = xo & yo
    xs, ys = result.data[x_var].values, result.data[y_var].values
    rows = [(0, 0, float(a), float(b)) for a, b in zip(xs[both], ys[both])]
    origin = (~both).astype(int)
    for k, d in enumerate(result.completed, start=1):
        rows += [(k, int(o), float(a), float(b)) for o, a, b in zip(origin, d[x_var].values, d[y_var].values)]
    return rows


def emit_scatter_data(result: MultiplyImputed, x_var: str, y_var: str, path: str | Path) -> list[tuple]:
    rows = scatter_rows(result, x_var, y_var)
    write_rows(path, SCATTER_HEADER, rows)
    return rows


def emit_deviance_plot(dev: DevianceResult, path: str | Path) -> list[tuple]:
    rows = [(int(i), float(p), float(r)) for i, p, r in zip(dev.rows, dev.p_hat, dev.residuals)]
    write_rows(path, DEVIANCE_HEADER, rows)
    return rows
