"""Posterior predictive diagnostics for multiply imputed data.

Cell level: each observed cell flagged for replication is compared with its
m replicates (interval coverage, distance to the replicate mean, interval
width). Binary targets get deviance residuals. Dataset level: posterior
predictive p-values for the completed-data and expected completed-data
discrepancies of a user statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.stats import norm

from .data import Dataset, RngStream
from .engine import EngineConfig, FcsChain, MultiplyImputed, _plan, make_chain

Statistic = Callable[[Dataset], float]


class DiagnosticError(ValueError):
    pass


@dataclass(frozen=True)
class ObsCellDiag:
    row: int
    column: str
    observed: float
    rep_mean: float
    lo: float
    hi: float
    covered: bool
    distance: float


@dataclass
class CellTable:
    """Column-wise cell diagnostics for one variable."""

    column: str
    rows: np.ndarray
    observed: np.ndarray
    rep_mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    covered: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return self.rows.size

    def __iter__(self) -> Iterator[ObsCellDiag]:
        for k in range(self.rows.size):
            yield ObsCellDiag(
                int(self.rows[k]), self.column, float(self.observed[k]), float(self.rep_mean[k]),
                float(self.lo[k]), float(self.hi[k]), bool(self.covered[k]), float(self.distance[k]),
            )


@dataclass
class VariableSummary:
    variable: str
    n_cells: int
    cov: float
    distance: float
    ciw: float
    deviance: float | None = None


@dataclass
class PpcReport:
    level: float
    summaries: dict[str, VariableSummary]
    cells: dict[str, CellTable]

    def iter_cells(self) -> Iterator[ObsCellDiag]:
        for table in self.cells.values():
            yield from table


@dataclass
class DevianceResult:
    column: str
    rows: np.ndarray
    observed: np.ndarray
    p_hat: np.ndarray
    residuals: np.ndarray
    mean_squared: float


@dataclass(frozen=True)
class DiscrepancyResult:
    p_value: float
    n_draws: int
    statistic: str = "T"
    n_inner: int | None = None


INTERVALS = ("normal", "quantile")


def replicate_interval(draws: np.ndarray, level: float, kind: str = "normal") -> tuple[np.ndarray, np.ndarray]:
    """Per-cell predictive interval from the replicates along axis 0.

    ``normal``: replicate mean +/- z * sd (ddof=1).
    ``quantile``: empirical quantiles with linear interpolation (type 7).
    """
    if kind == "normal":
        z = float(norm.ppf(0.5 + level / 2.0))
        centre = draws.mean(axis=0)
        half = z * draws.std(axis=0, ddof=1)
        return centre - half, centre + half
    if kind == "quantile":
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(draws, [a, 1.0 - a], axis=0, method="linear")
        return lo, hi
    raise DiagnosticError(f"unknown interval kind {kind!r}; expected one of {INTERVALS}")


def cell_diagnostics(
    result: MultiplyImputed,
    level: float,
    variables: Sequence[str] | None = None,
    interval: str = "normal",
) -> PpcReport:
    """Coverage, distance and interval width of observed cells vs. their replicates."""
    if not 0.0 < level < 1.0:
        raise DiagnosticError(f"level must lie in (0, 1), got {level}")
    if interval not in INTERVALS:
        raise DiagnosticError(f"unknown interval kind {interval!r}; expected one of {INTERVALS}")
    if result.m < 2:
        raise DiagnosticError("at least two replicates per cell are needed")
    names = list(result.replicates) if variables is None else list(variables)
    if not names:
        raise DiagnosticError("no replicated cells; run the engine with a where-mask on observed cells")
    if result.m < 20 and level >= 0.9:
        warnings.warn(f"only {result.m} replicates per cell; wide-level intervals are unreliable", stacklevel=2)
    summaries, cells = {}, {}
    for name in names:
        if name not in result.replicates:
            raise DiagnosticError(f"no replicates for variable {name!r}")
        rep = result.replicates[name]
        rep_mean = rep.draws.mean(axis=0)
        lo, hi = replicate_interval(rep.draws, level, interval)
        covered = (lo <= rep.observed) & (rep.observed <= hi)
        distance = np.abs(rep.observed - rep_mean)
        cells[name] = CellTable(name, rep.rows, rep.observed, rep_mean, lo, hi, covered, distance)
        summaries[name] = VariableSummary(
            variable=name,
            n_cells=int(rep.rows.size),
            cov=float(covered.mean()),
            distance=float(distance.mean()),
            ciw=float((hi - lo).mean()),
        )
    for name, s in summaries.items():
        if result.data[name].kind.value == "binary":
            s.deviance = deviance_summary(result, name).mean_squared
    return PpcReport(level, summaries, cells)


def deviance_residuals(y: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    ll = y * np.log(p_hat) + (1 - y) * np.log1p(-p_hat)
    return np.sign(y - p_hat) * np.sqrt(-2.0 * ll)


def deviance_summary(result: MultiplyImputed, target: str) -> DevianceResult:
    """Deviance residuals of observed binary cells against the replicate frequency.

    p_hat is the share of replicates equal to 1, clamped to [1/(2m), 1 - 1/(2m)].
    """
    col = result.data[target]
    if col.kind.value != "binary":
        raise DiagnosticError(f"{target!r} is not a binary column")
    if target not in result.replicates:
        raise DiagnosticError(f"no replicates for variable {target!r}")
    rep = result.replicates[target]
    m = rep.draws.shape[0]
    floor = 1.0 / (2 * m)
    p_hat = np.clip((rep.draws == 1.0).mean(axis=0), floor, 1.0 - floor)
    d = deviance_residuals(rep.observed, p_hat)
    return DevianceResult(target, rep.rows, rep.observed, p_hat, d, float(np.mean(d * d)))


# -- posterior predictive p-values --------------------------------------------

def ppc_pvalue(observed_stats, replicate_stats, label: str = "T") -> DiscrepancyResult:
    """Share of draws with T(y_rep) >= T(y); ties count as exceedances.

    ``observed_stats`` may be a scalar when the statistic does not depend on
    the parameters.
    """
    rep = np.atleast_1d(np.asarray(replicate_stats, dtype=float))
    if rep.size == 0:
        raise DiagnosticError("no replicate statistics")
    obs = np.broadcast_to(np.asarray(observed_stats, dtype=float), rep.shape)
    return DiscrepancyResult(float(np.mean(rep >= obs)), int(rep.size), label)


def _as_dataset(chain: FcsChain, values: np.ndarray) -> Dataset:
    filled = chain.data.observed_matrix().copy()
    for cp in chain.plans:
        filled[:, cp.j] = True
        if cp.companion is not None:
            filled[:, cp.companion] = True
    return chain.data.with_matrix(values, filled)


def _replicate(chain: FcsChain, fitted: dict, base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Redraw every row of every imputed column under the fitted parameters,
    each column conditioning on the already replicated ones."""
    rep = base.copy()
    all_rows = np.arange(rep.shape[0])
    for cp in chain.plans:
        vals, comp = chain.draw(cp, fitted[cp.name], rep, all_rows, rng)
        rep[:, cp.j] = vals
        if comp is not None:
            rep[:, cp.companion] = comp
    return rep


def _reimpute_missing(chain: FcsChain, fitted: dict, base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = base.copy()
    for cp in chain.plans:
        rows = np.flatnonzero(~cp.fit_rows)
        if rows.size == 0:
            continue
        vals, comp = chain.draw(cp, fitted[cp.name], out, rows, rng)
        out[rows, cp.j] = vals
        if comp is not None:
            out[rows, cp.companion] = comp
    return out


def _imputation_config(config: EngineConfig) -> EngineConfig:
    # Replication happens explicitly below; the chain itself only imputes.
    return config.replace(where=None)


def _outer_draw(chain: FcsChain, stream: RngStream, j: int):
    """One parameter draw: update y_mis with it and simulate y_com^rep."""
    chain.rng = stream.child(1, j).generator()
    fitted = {name: f for name, (f, _) in chain.sweep(context=(("draw", j + 1),)).items()}
    y_com = chain.work.copy()
    y_rep = _replicate(chain, fitted, y_com, chain.rng)
    return fitted, y_com, y_rep


def _burned_chain(data: Dataset, config: EngineConfig) -> tuple[FcsChain, RngStream]:
    cfg = _imputation_config(config)
    stream = RngStream(cfg.seed)
    chain = make_chain(data, cfg, stream.child(0))
    for t in range(cfg.maxit):
        chain.sweep(context=(("burn-in", t + 1),))
    return chain, stream


def p_b_com(data: Dataset, config: EngineConfig, statistic: Statistic, n_draws: int,
            label: str = "T") -> DiscrepancyResult:
    """Completed-data posterior predictive p-value.

    A single chain is run for ``config.maxit`` burn-in sweeps; each of the
    next ``n_draws`` sweeps supplies one parameter draw, the matching
    imputation y_mis and a full replicate y_com^rep under the same parameters.
    """
    if n_draws < 1:
        raise DiagnosticError("n_draws must be >= 1")
    chain, stream = _burned_chain(data, config)
    t_rep = np.empty(n_draws)
    t_com = np.empty(n_draws)
    for j in range(n_draws):
        _, y_com, y_rep = _outer_draw(chain, stream, j)
        t_com[j] = statistic(_as_dataset(chain, y_com))
        t_rep[j] = statistic(_as_dataset(chain, y_rep))
    return ppc_pvalue(t_com, t_rep, label)


def p_b_ecom(data: Dataset, config: EngineConfig, statistic: Statistic, n_outer: int, n_inner: int,
             label: str = "T") -> DiscrepancyResult:
    """Expected completed-data posterior predictive p-value.

    Outer draws match :func:`p_b_com` (same streams). For outer draw j the
    missing cells are re-imputed ``n_inner`` times under the same parameters,
    conditioning on the replicated observed part, and
    D_jk = T(y_obs^rep_j, y_mis_jk) - T(y_obs, y_mis_jk) is averaged over k.
    """
    if n_outer < 1:
        raise DiagnosticError("n_outer must be >= 1")
    if n_inner < 1:
        raise DiagnosticError("n_inner must be >= 1")
    chain, stream = _burned_chain(data, config)
    observed = chain.data.observed_matrix()
    obs_values = chain.data.values_matrix()
    d_bar = np.empty(n_outer)
    for j in range(n_outer):
        fitted, _, y_rep = _outer_draw(chain, stream, j)
        diffs = np.empty(n_inner)
        for k in range(n_inner):
            inner_rng = stream.child(2, j, k).generator()
            rep_filled = _reimpute_missing(chain, fitted, y_rep, inner_rng)
            obs_filled = np.where(observed, obs_values, rep_filled)
            diffs[k] = statistic(_as_dataset(chain, rep_filled)) - statistic(_as_dataset(chain, obs_filled))
        d_bar[j] = diffs.mean()
    return DiscrepancyResult(float(np.mean(d_bar >= 0)), n_outer, label, n_inner)
