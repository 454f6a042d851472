"""Simulation scenarios, strategy comparison and Rubin pooling.

Three data-generating designs are provided:

1. quadratic outcome: x ~ U(-3, 3), y = x + x^2 + e, y incomplete;
2. quadratic covariate: x ~ N(0, 1), y = x + x^2 + e, (x, x^2) jointly incomplete;
3. binary outcome: x ~ U(-3, 3), z ~ N(1, 1), y ~ Bernoulli(expit(x + z)).

Each factor cell (mechanism x proportion) generates one dataset, amputes it
once and imputes it ``m`` times under every candidate model.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from .amputation import AmputePattern, AmputeSpec, Mechanism, ampute
from .data import ColumnKind, Dataset, RngStream, write_rows
from .engine import EngineConfig, MultiplyImputed, replication_mask, run_fcs
from .imputers import ImputerSpec, MethodName, design
from .ppc import cell_diagnostics, deviance_summary


class Scenario(enum.IntEnum):
    QUAD_OUTCOME = 1
    QUAD_COVARIATE = 2
    LOGISTIC_OUTCOME = 3


PROPORTIONS = (0.3, 0.5, 0.8)
MECHANISMS = (Mechanism.MCAR, Mechanism.MARR)
LEVELS = (0.75, 0.95)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario
    n: int = 1000
    proportions: tuple[float, ...] = PROPORTIONS
    mechanisms: tuple[Mechanism, ...] = MECHANISMS
    levels: tuple[float, ...] = LEVELS
    m: int = 50
    seed: int = 1
    repetitions: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "mechanisms", tuple(Mechanism(x) for x in self.mechanisms))
        if self.n < 50:
            raise ValueError("n must be >= 50")
        if self.m < 2:
            raise ValueError("m must be >= 2")


# -- generators ---------------------------------------------------------------

def _gen(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def gen_scenario1(n: int, rng) -> Dataset:
    g = _gen(rng)
    x = g.uniform(-3.0, 3.0, n)
    y = x + x * x + g.standard_normal(n)
    return Dataset.from_arrays({"x": x, "x2": x * x, "y": y})


def gen_scenario2(n: int, rng) -> Dataset:
    g = _gen(rng)
    x = g.standard_normal(n)
    y = x + x * x + g.standard_normal(n)
    return Dataset.from_arrays({"x": x, "x2": x * x, "y": y})


def gen_scenario3(n: int, rng) -> Dataset:
    g = _gen(rng)
    x = g.uniform(-3.0, 3.0, n)
    z = g.normal(1.0, 1.0, n)
    y = (g.random(n) < expit(x + z)).astype(float)
    return Dataset.from_arrays({"x": x, "z": z, "y": y}, kinds={"y": ColumnKind.BINARY})


GENERATORS = {
    Scenario.QUAD_OUTCOME: gen_scenario1,
    Scenario.QUAD_COVARIATE: gen_scenario2,
    Scenario.LOGISTIC_OUTCOME: gen_scenario3,
}

PATTERNS = {
    Scenario.QUAD_OUTCOME: AmputePattern(("y",), {"x": 1.0}),
    Scenario.QUAD_COVARIATE: AmputePattern(("x", "x2"), {"y": 1.0}),
    Scenario.LOGISTIC_OUTCOME: AmputePattern(("y",), {"x": 1.0, "z": 1.0}),
}

# model label -> imputation models, per scenario
MODELS: dict[Scenario, dict[str, dict[str, ImputerSpec]]] = {
    Scenario.QUAD_OUTCOME: {
        "linear": {"y": ImputerSpec(MethodName.NORM, ("x",))},
        "quadratic": {"y": ImputerSpec(MethodName.NORM, ("x", "x2"))},
    },
    Scenario.QUAD_COVARIATE: {
        "PC": {"x": ImputerSpec(MethodName.POLYCOMB, ("y",), quad_term="x2")},
        "SMC-FCS": {"x": ImputerSpec(MethodName.SMCFCS_QUAD, ("y",), quad_term="x2")},
        "PMM": {"x": ImputerSpec(MethodName.PMM, ("y",), quad_term="x2")},
    },
    Scenario.LOGISTIC_OUTCOME: {
        "with x": {"y": ImputerSpec(MethodName.LOGREG, ("x", "z"))},
        "without x": {"y": ImputerSpec(MethodName.LOGREG, ("z",))},
    },
}

# Sweeps per chain. Missingness is univariate everywhere, so the regression
# methods need one sweep; the quadratic-covariate methods also refit their
# substantive model on the completed data and need a few.
MAXIT = {"PC": 10, "SMC-FCS": 10}


# -- scenario runs ------------------------------------------------------------

@dataclass
class CellResult:
    scenario: int
    mechanism: str
    proportion: float
    model: str
    level: float
    cov: float
    distance: float
    ciw: float
    deviance: float | None = None
    n_observed: int = 0

    def row(self) -> list:
        return [self.scenario, self.mechanism, self.proportion, self.model, self.level,
                self.cov, self.distance, self.ciw, self.deviance, self.n_observed]


RESULT_HEADER = ["scenario", "mechanism", "proportion", "model", "level",
                 "cov", "distance", "ciw", "deviance", "n_observed"]


@dataclass
class FactorCell:
    """One amputed dataset with the multiply imputed result of every model."""

    mechanism: Mechanism
    proportion: float
    data: Dataset
    amputed: Dataset
    results: dict[str, MultiplyImputed] = field(default_factory=dict)


def make_factor_cell(scenario: Scenario, n: int, mechanism: Mechanism, proportion: float,
                     stream: RngStream) -> tuple[Dataset, Dataset]:
    data = GENERATORS[scenario](n, stream.child(0))
    spec = AmputeSpec(PATTERNS[scenario], mechanism, proportion)
    return data, ampute(data, spec, stream.child(1))


def impute_cell(amputed: Dataset, models: Mapping[str, ImputerSpec], m: int, seed: int,
                maxit: int = 1) -> MultiplyImputed:
    config = EngineConfig(
        m=m, maxit=maxit, specs=models, seed=seed,
        where=replication_mask(amputed, list(models)),
    )
    return run_fcs(amputed, config)


def _cell_stream(spec: ScenarioSpec, mechanism: Mechanism, proportion: float) -> RngStream:
    return RngStream(spec.seed).child(int(spec.scenario), MECHANISMS.index(mechanism),
                                      int(round(proportion * 100)))


def run_factor_cell(spec: ScenarioSpec, mechanism: Mechanism, proportion: float,
                    models: Sequence[str] | None = None) -> FactorCell:
    stream = _cell_stream(spec, mechanism, proportion)
    data, amputed = make_factor_cell(spec.scenario, spec.n, mechanism, proportion, stream)
    cell = FactorCell(mechanism, proportion, data, amputed)
    for k, (label, specs) in enumerate(MODELS[spec.scenario].items()):
        if models is not None and label not in models:
            continue
        seed = stream.child(2, k).derive_seed()
        cell.results[label] = impute_cell(amputed, specs, spec.m, seed, MAXIT.get(label, 1))
    return cell


def summarize_cell(spec: ScenarioSpec, cell: FactorCell) -> list[CellResult]:
    rows = []
    for label, result in cell.results.items():
        target = next(iter(MODELS[spec.scenario][label]))
        for level in spec.levels:
            report = cell_diagnostics(result, level, [target])
            s = report.summaries[target]
            rows.append(CellResult(
                int(spec.scenario), cell.mechanism.value, cell.proportion, label, level,
                s.cov, s.distance, s.ciw, s.deviance, s.n_cells,
            ))
    return rows


def run_scenario(spec: ScenarioSpec, out_dir: str | Path | None = None) -> list[CellResult]:
    """Every mechanism x proportion cell of one scenario; optionally write CSV.

    Rows come out in canonical order: mechanism, proportion, model, level.
    """
    rows = []
    for mechanism in spec.mechanisms:
        for proportion in spec.proportions:
            try:
                cell = run_factor_cell(spec, mechanism, proportion)
            except Exception as exc:
                raise RuntimeError(
                    f"scenario {int(spec.scenario)}, {mechanism.value}, proportion {proportion}: {exc}"
                ) from exc
            rows.extend(summarize_cell(spec, cell))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / f"scenario{int(spec.scenario)}.csv", RESULT_HEADER, (r.row() for r in rows))
    return rows


# -- Rubin's rules ------------------------------------------------------------

def pool_rubin(estimates, variances) -> tuple[float, float]:
    """Pooled estimate and total variance W + (1 + 1/m) B."""
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    m = q.shape[0]
    if m < 2:
        raise ValueError("Rubin pooling needs at least two imputations")
    if u.shape != q.shape:
        raise ValueError("estimates and variances differ in length")
    between = q.var(ddof=1)
    return float(q.mean()), float(u.mean() + (1 + 1 / m) * between)


@dataclass(frozen=True)
class PooledEstimate:
    estimate: float
    total_variance: float
    df: float
    lo: float
    hi: float


def rubin_interval(estimates, variances, level: float = 0.95) -> PooledEstimate:
    """Pooled estimate with a t interval on Rubin's (1987) degrees of freedom."""
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    m = q.shape[0]
    est, total = pool_rubin(q, u)
    b = q.var(ddof=1)
    r = (1 + 1 / m) * b / u.mean() if u.mean() > 0 else np.inf
    df = np.inf if r == 0 else (m - 1) * (1 + 1 / r) ** 2
    half = stats.t.ppf(0.5 + level / 2, df) * np.sqrt(total)
    return PooledEstimate(est, total, float(df), est - half, est + half)


def fit_quadratic_ols(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """OLS of y on x and x^2: coefficients and their sampling variances."""
    x = data["x"].values
    y = data["y"].values
    Xd = design(np.column_stack([x, x * x]))
    beta, *_ = np.linalg.lstsq(Xd, y, rcond=None)
    resid = y - Xd @ beta
    s2 = resid @ resid / (Xd.shape[0] - Xd.shape[1])
    var = s2 * np.diag(np.linalg.inv(Xd.T @ Xd))
    return beta, var


@dataclass
class CoverageResult:
    coefficient: str
    true_value: float
    mean_estimate: float
    coverage: float
    repetitions: int

    def row(self) -> list:
        return [self.coefficient, self.true_value, self.mean_estimate, self.coverage, self.repetitions]


def run_pmm_coverage(n: int = 1000, m: int = 50, repetitions: int = 200, proportion: float = 0.3,
                     seed: int = 1, level: float = 0.95, donors: int = 5) -> list[CoverageResult]:
    """Repeated-sampling check of PMM on the quadratic-covariate design under MCAR.

    Each repetition imputes (x, x^2) by PMM on y, fits y ~ x + x^2 to every
    completed dataset and pools with Rubin's rules.
    """
    root = RngStream(seed).child(4)
    pattern = PATTERNS[Scenario.QUAD_COVARIATE]
    specs = {"x": ImputerSpec(MethodName.PMM, ("y",), donors=donors, quad_term="x2")}
    est = np.empty((repetitions, 2))
    cover = np.zeros((repetitions, 2), dtype=bool)
    for r in range(repetitions):
        stream = root.child(r)
        data = gen_scenario2(n, stream.child(0))
        amputed = ampute(data, AmputeSpec(pattern, Mechanism.MCAR, proportion), stream.child(1))
        result = run_fcs(amputed, EngineConfig(m=m, maxit=1, specs=specs, seed=stream.child(2).derive_seed()))
        fits = [fit_quadratic_ols(d) for d in result.completed]
        for k in (1, 2):
            pooled = rubin_interval([f[0][k] for f in fits], [f[1][k] for f in fits], level)
            est[r, k - 1] = pooled.estimate
            cover[r, k - 1] = pooled.lo <= 1.0 <= pooled.hi
    return [
        CoverageResult(name, 1.0, float(est[:, k].mean()), float(cover[:, k].mean()), repetitions)
        for k, name in enumerate(("beta1", "beta2"))
    ]


# -- strategy comparison ------------------------------------------------------

@dataclass
class StrategyRow:
    strategy: str
    variable: str
    cov: float
    distance: float
    ciw: float

    def row(self) -> list:
        return [self.strategy, self.variable, self.cov, self.distance, self.ciw]


def run_strategy_comparison(
    data: Dataset,
    strategies: Mapping[str, Mapping[str, ImputerSpec]] | Sequence[Mapping[str, ImputerSpec]],
    level: float = 0.95,
    m: int = 50,
    seed: int = 1,
    maxit: int = 10,
) -> list[StrategyRow]:
    """Per strategy and incomplete variable: COV, Distance and CIW.

    Every strategy must give a model to every incomplete column; all
    strategies share the same seed.
    """
    if not isinstance(strategies, Mapping):
        strategies = {f"strategy {k + 1}": s for k, s in enumerate(strategies)}
    if not strategies:
        raise ValueError("at least one strategy is required")
    incomplete = [c.name for c in data.columns if c.n_missing]
    rows = []
    for label, specs in strategies.items():
        absent = [v for v in incomplete if v not in specs]
        if absent:
            raise ValueError(f"{label}: no imputation model for incomplete variable(s) {absent}")
        config = EngineConfig(m=m, maxit=maxit, specs=specs, seed=seed,
                              where=replication_mask(data, list(specs)))
        report = cell_diagnostics(run_fcs(data, config), level)
        for name in specs:
            s = report.summaries[name]
            rows.append(StrategyRow(label, name, s.cov, s.distance, s.ciw))
    return rows


def parse_strategies(doc) -> dict[str, dict[str, ImputerSpec]]:
    """Strategies JSON: a list of method maps, or a name -> method-map object."""
    if isinstance(doc, list):
        doc = {f"strategy {k + 1}": s for k, s in enumerate(doc)}
    return {name: {col: ImputerSpec.from_dict(s) for col, s in specs.items()} for name, specs in doc.items()}


def deviance_table(spec: ScenarioSpec, cell: FactorCell) -> dict[str, float]:
    return {label: deviance_summary(res, "y").mean_squared for label, res in cell.results.items()}
