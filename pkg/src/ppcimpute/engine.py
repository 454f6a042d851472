"""Chained-equations driver with replication of observed cells.

Each of the ``m`` chains starts from a hot-deck initialization and then
sweeps over the imputed columns ``maxit`` times. Within a sweep every column
gets fresh parameters (fitted on the rows where it is genuinely observed,
with the latest values of its predictors) and fresh values for its
draw set, which is its missing cells plus any observed cells flagged in the
where-mask. Draws for flagged observed cells are the posterior predictive
replicates used by :mod:`ppcimpute.ppc`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, RngStream, check_where
from .imputers import Fitted, ImputerSpec, MethodName, fit_method

DEFAULT_MAXIT = 10


class EngineError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class PpcMode(str, enum.Enum):
    RETAIN = "retain"
    OVERWRITE = "overwrite"


@dataclass(frozen=True)
class EngineConfig:
    m: int
    specs: Mapping[str, ImputerSpec]
    maxit: int = DEFAULT_MAXIT
    where: np.ndarray | None = None
    ppc_mode: PpcMode = PpcMode.RETAIN
    seed: int = 0
    visit_order: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ppc_mode", PpcMode(self.ppc_mode))
        object.__setattr__(self, "specs", dict(self.specs))
        if self.visit_order is not None:
            object.__setattr__(self, "visit_order", tuple(self.visit_order))
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.maxit < 1:
            raise ConfigError("maxit must be >= 1")

    def replace(self, **changes) -> "EngineConfig":
        kw = dict(m=self.m, specs=self.specs, maxit=self.maxit, where=self.where,
                  ppc_mode=self.ppc_mode, seed=self.seed, visit_order=self.visit_order)
        kw.update(changes)
        return EngineConfig(**kw)

    @classmethod
    def from_dict(cls, doc: dict, data: Dataset | None = None) -> "EngineConfig":
        """Parse the JSON engine document.

        ``{"m": 50, "maxit": 10, "seed": 1, "ppc_mode": "retain",
        "where": "observed", "methods": {"y": {"method": "pmm", ...}}}``

        ``where`` is ``"observed"`` (replicate every observed cell of the
        imputed columns, needs ``data``) or ``"none"`` (the default).
        """
        specs = {name: ImputerSpec.from_dict(s) for name, s in doc.get("methods", {}).items()}
        where = None
        mode = doc.get("where", "none")
        if mode == "observed":
            if data is None:
                raise ConfigError('where="observed" needs the dataset')
            where = replication_mask(data, list(specs))
        elif mode != "none":
            raise ConfigError(f"unknown where mode {mode!r}")
        return cls(
            m=int(doc.get("m", 5)),
            maxit=int(doc.get("maxit", DEFAULT_MAXIT)),
            seed=int(doc.get("seed", 0)),
            ppc_mode=PpcMode(doc.get("ppc_mode", "retain")),
            specs=specs,
            where=where,
            visit_order=doc.get("visit_order"),
        )

    @classmethod
    def from_json(cls, path: str | Path, data: Dataset | None = None) -> "EngineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), data)


def where_all_observed(data: Dataset) -> np.ndarray:
    """The replication mask: True exactly at observed cells."""
    return data.observed_matrix().copy()


def replication_mask(data: Dataset, columns: Sequence[str]) -> np.ndarray:
    """Observed cells of ``columns`` only."""
    mask = np.zeros((data.n, data.p), dtype=bool)
    for name in columns:
        j = data.index(name)
        mask[:, j] = data.columns[j].observed
    return mask


@dataclass
class Replicates:
    """The m replicate draws for the observed where-cells of one column."""

    column: str
    rows: np.ndarray
    observed: np.ndarray
    draws: np.ndarray  # (m, len(rows))


@dataclass
class TraceRow:
    chain: int
    iteration: int
    column: str
    mean: float
    sd: float


@dataclass
class MultiplyImputed:
    data: Dataset
    config: EngineConfig
    completed: list[Dataset]
    replicates: dict[str, Replicates]
    imputed_columns: list[str]
    traces: np.ndarray  # (m, maxit, n_columns, 2): mean, sd of fresh draws
    flags: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.completed)


# -- planning -----------------------------------------------------------------

@dataclass
class _ColumnPlan:
    j: int
    name: str
    spec: ImputerSpec
    pred: np.ndarray
    companion: int | None
    fit_rows: np.ndarray  # bool, originally observed
    draw_rows: np.ndarray  # row indices drawn each sweep
    draw_missing: np.ndarray  # bool over draw_rows
    rep_rows: np.ndarray  # observed where-rows (subset of draw_rows)


def _plan(data: Dataset, config: EngineConfig) -> list[_ColumnPlan]:
    specs = config.specs
    where = np.zeros((data.n, data.p), dtype=bool) if config.where is None else check_where(data, config.where)
    for name in specs:
        if name not in data:
            raise ConfigError(f"imputation model given for unknown column {name!r}")
    companions = {}
    for name, spec in specs.items():
        if spec.quad_term is not None:
            if spec.quad_term not in data:
                raise ConfigError(f"{name}: unknown quad_term column {spec.quad_term!r}")
            if spec.quad_term in specs:
                raise ConfigError(f"{name}: quad_term {spec.quad_term!r} must not have its own model")
            if not np.array_equal(data[spec.quad_term].observed, data[name].observed):
                raise ConfigError(f"{name}: quad_term {spec.quad_term!r} must be missing jointly with it")
            companions[spec.quad_term] = name
    for j, name in enumerate(data.names):
        if where[:, j].any() and name not in specs:
            raise ConfigError(f"where-mask flags cells of {name!r}, which has no imputation model")
    for name, spec in specs.items():
        for p in spec.predictors:
            if p not in data:
                raise ConfigError(f"{name}: unknown predictor {p!r}")
            if p == name or p == spec.quad_term:
                raise ConfigError(f"{name}: a column cannot predict itself")
            if data[p].n_missing and p not in specs and p not in companions:
                raise ConfigError(f"{name}: predictor {p!r} has missing cells but no imputation model")
        if spec.method is MethodName.LOGREG:
            col = data[name]
            vals = col.values[col.observed]
            if not np.all((vals == 0) | (vals == 1)):
                raise ConfigError(f"{name}: logreg needs a 0/1 target")

    order = list(config.visit_order) if config.visit_order else [n for n in data.names if n in specs]
    if sorted(order) != sorted(specs):
        raise ConfigError("visit_order must list every imputed column exactly once")
    plans = []
    for name in order:
        j = data.index(name)
        spec = specs[name]
        obs = data.columns[j].observed
        drawn = (~obs) | where[:, j]
        rows = np.flatnonzero(drawn)
        plans.append(_ColumnPlan(
            j=j, name=name, spec=spec,
            pred=np.array([data.index(p) for p in spec.predictors], dtype=int),
            companion=None if spec.quad_term is None else data.index(spec.quad_term),
            fit_rows=obs.copy(),
            draw_rows=rows,
            draw_missing=~obs[rows],
            rep_rows=np.flatnonzero(obs & where[:, j]),
        ))
    return plans


# -- chains -------------------------------------------------------------------

class FcsChain:
    """One Gibbs-style chain over the working copy of the data."""

    def __init__(self, data: Dataset, plans: list[_ColumnPlan], mode: PpcMode, rng: np.random.Generator):
        self.data = data
        self.plans = plans
        self.mode = mode
        self.rng = rng
        self.work = data.values_matrix()

    def initialize(self) -> None:
        """Fill draw cells with values from randomly chosen observed rows."""
        for cp in self.plans:
            rows = cp.draw_rows if self.mode is PpcMode.OVERWRITE else cp.draw_rows[cp.draw_missing]
            donors = np.flatnonzero(cp.fit_rows)
            if donors.size == 0:
                raise EngineError(f"column {cp.name!r} has no observed values")
            pick = donors[self.rng.integers(0, donors.size, size=rows.size)]
            self.work[rows, cp.j] = self.data.columns[cp.j].values[pick]
            if cp.companion is not None:
                self.work[rows, cp.companion] = self.data.columns[cp.companion].values[pick]

    def fit(self, cp: _ColumnPlan, rng: np.random.Generator | None = None) -> Fitted:
        rng = self.rng if rng is None else rng
        companion = None if cp.companion is None else self.work[:, cp.companion]
        return fit_method(cp.spec, self.work[:, cp.j], self.work[:, cp.pred], cp.fit_rows, rng, companion)

    @staticmethod
    def draw(cp: _ColumnPlan, fitted: Fitted, source: np.ndarray, rows: np.ndarray,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
        """Values (and companion values) for ``rows`` given predictors in ``source``."""
        out = fitted.draw(source[np.ix_(rows, cp.pred)], rng)
        if out.ndim == 2:
            return out[:, 0], out[:, 1]
        if cp.companion is not None:
            return out, out * out
        return out, None

    def sweep(self, context: tuple = ()) -> dict[str, tuple[Fitted, np.ndarray]]:
        """One pass over all imputed columns. Returns name -> (fitted, drawn values)."""
        result = {}
        for cp in self.plans:
            try:
                fitted = self.fit(cp)
                vals, comp = self.draw(cp, fitted, self.work, cp.draw_rows, self.rng)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                where = ", ".join(f"{k} {v}" for k, v in context)
                raise EngineError(f"{where + ', ' if where else ''}column {cp.name!r}: {exc}") from exc
            write = np.ones(cp.draw_rows.size, dtype=bool) if self.mode is PpcMode.OVERWRITE else cp.draw_missing
            self.work[cp.draw_rows[write], cp.j] = vals[write]
            if comp is not None:
                self.work[cp.draw_rows[write], cp.companion] = comp[write]
            result[cp.name] = (fitted, vals)
        return result

    def completed(self) -> Dataset:
        filled = self.data.observed_matrix().copy()
        for cp in self.plans:
            filled[:, cp.j] = True
            if cp.companion is not None:
                filled[:, cp.companion] = True
        return self.data.with_matrix(self.work.copy(), filled)


def make_chain(data: Dataset, config: EngineConfig, stream: RngStream) -> FcsChain:
    chain = FcsChain(data, _plan(data, config), config.ppc_mode, stream.generator())
    chain.initialize()
    return chain


def run_fcs(data: Dataset, config: EngineConfig) -> MultiplyImputed:
    """Run ``config.m`` independent chains of ``config.maxit`` sweeps each.

    Chain ``c`` draws from ``RngStream(config.seed).child(c)``.
    """
    plans = _plan(data, config)
    root = RngStream(config.seed)
    names = [cp.name for cp in plans]
    traces = np.full((config.m, config.maxit, len(plans), 2), np.nan)
    rep_draws = {cp.name: np.empty((config.m, cp.rep_rows.size)) for cp in plans}
    completed = []
    for c in range(config.m):
        chain = FcsChain(data, plans, config.ppc_mode, root.child(c).generator())
        chain.initialize()
        for t in range(config.maxit):
            drawn = chain.sweep(context=(("chain", c), ("iteration", t + 1)))
            for k, cp in enumerate(plans):
                vals = drawn[cp.name][1]
                if vals.size:
                    traces[c, t, k, 0] = vals.mean()
                    traces[c, t, k, 1] = vals.std(ddof=1) if vals.size > 1 else 0.0
        for cp in plans:
            vals = drawn[cp.name][1]
            rep_draws[cp.name][c] = vals[~cp.draw_missing]
        completed.append(chain.completed())

    replicates = {}
    for cp in plans:
        if cp.rep_rows.size:
            replicates[cp.name] = Replicates(
                column=cp.name,
                rows=cp.rep_rows,
                observed=data.columns[cp.j].values[cp.rep_rows].copy(),
                draws=rep_draws[cp.name],
            )
    return MultiplyImputed(data, config, completed, replicates, names, traces)


def chain_trace_summary(result: MultiplyImputed) -> list[TraceRow]:
    """Mean and sd of freshly drawn values per chain x iteration x column."""
    if result.config.maxit < 2:
        raise ValueError("trace summaries need maxit >= 2")
    rows = []
    m, maxit, k, _ = result.traces.shape
    for c in range(m):
        for t in range(maxit):
            for j in range(k):
                mean, sd = result.traces[c, t, j]
                rows.append(TraceRow(c + 1, t + 1, result.imputed_columns[j], float(mean), float(sd)))
    return rows
