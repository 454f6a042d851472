import math

import numpy as np
import pytest
from scipy import stats

from ppcimpute.data import ColumnKind, Dataset
from ppcimpute.engine import EngineConfig, MultiplyImputed, Replicates, run_fcs
from ppcimpute.imputers import ImputerSpec
from ppcimpute.ppc import (
    DiagnosticError, cell_diagnostics, deviance_residuals, deviance_summary, p_b_com, p_b_ecom,
    ppc_pvalue, replicate_interval,
)


def fake_result(observed, draws, kind=ColumnKind.CONTINUOUS):
    observed = np.asarray(observed, dtype=float)
    draws = np.asarray(draws, dtype=float)
    data = Dataset.from_arrays({"v": observed}, {"v": kind})
    rep = Replicates("v", np.arange(observed.size), observed, draws)
    cfg = EngineConfig(m=draws.shape[0], specs={})
    return MultiplyImputed(data, cfg, [data] * draws.shape[0], {"v": rep}, ["v"], np.empty((0,)))


def toy_data(n=200, seed=11):
    g = np.random.default_rng(seed)
    y = g.normal(1.0, 1.0, n)
    obs = g.random(n) > 0.3
    # z is pure noise: the regression model nests the normal-mean model
    return Dataset.from_arrays({"z": g.standard_normal(n), "y": np.where(obs, y, np.nan)})


TOY = EngineConfig(m=1, maxit=5, specs={"y": ImputerSpec("norm", ["z"])}, seed=3)


def sample_mean(ds):
    return float(ds["y"].values.mean())


def oracle_p_com(data, n_draws, seed):
    """Closed-form posterior of the regression y ~ 1 + z (flat prior), simulated directly."""
    g = np.random.default_rng(seed)
    y, z = data["y"].values, data["z"].values
    obs = data["y"].observed
    X = np.column_stack([np.ones(z.size), z])
    Xo, yo = X[obs], y[obs]
    xtx_inv = np.linalg.inv(Xo.T @ Xo)
    bhat = xtx_inv @ Xo.T @ yo
    ssr = float(np.sum((yo - Xo @ bhat) ** 2))
    nu = obs.sum() - 2
    hits = 0
    for _ in range(n_draws):
        s2 = ssr / g.chisquare(nu)
        beta = g.multivariate_normal(bhat, s2 * xtx_inv)
        mu = X @ beta
        y_com = np.where(obs, y, mu + math.sqrt(s2) * g.standard_normal(z.size))
        y_rep = mu + math.sqrt(s2) * g.standard_normal(z.size)
        hits += y_rep.mean() >= y_com.mean()
    return hits / n_draws


# -- cell level ---------------------------------------------------------------

def test_degenerate_replicates():
    obs = np.array([1.0, 2.0, 3.0])
    for kind in ("normal", "quantile"):
        rep = cell_diagnostics(fake_result(obs, np.tile(obs, (25, 1))), 0.95, interval=kind)
        s = rep.summaries["v"]
        assert (s.distance, s.ciw, s.cov) == (0.0, 0.0, 1.0)


def test_cell_table_consistency(rng):
    obs = rng.standard_normal(40)
    draws = rng.standard_normal((30, 40))
    rep = cell_diagnostics(fake_result(obs, draws), 0.75)
    cells = list(rep.iter_cells())
    assert len(cells) == 40
    for c in cells:
        assert c.lo <= c.hi
        assert c.covered == (c.lo <= c.observed <= c.hi)
        assert c.distance == abs(c.observed - c.rep_mean)
    s = rep.summaries["v"]
    assert 0 <= s.cov <= 1 and s.ciw >= 0


def test_interval_kinds_against_direct_formulas(rng):
    draws = rng.standard_normal((50, 7))
    lo, hi = replicate_interval(draws, 0.9, "normal")
    z = stats.norm.ppf(0.95)
    np.testing.assert_allclose(lo, draws.mean(0) - z * draws.std(0, ddof=1))
    np.testing.assert_allclose(hi, draws.mean(0) + z * draws.std(0, ddof=1))
    lo, hi = replicate_interval(draws, 0.9, "quantile")
    for j in range(7):
        s = np.sort(draws[:, j])
        # type 7: h = (m - 1) p, interpolate between order statistics
        h = 49 * 0.05
        assert lo[j] == pytest.approx(s[int(h)] + (h - int(h)) * (s[int(h) + 1] - s[int(h)]))
    with pytest.raises(DiagnosticError):
        replicate_interval(draws, 0.9, "bogus")


def test_wider_level_gives_wider_intervals(rng):
    res = fake_result(rng.standard_normal(60), rng.standard_normal((40, 60)))
    a, b = cell_diagnostics(res, 0.75), cell_diagnostics(res, 0.95)
    assert a.summaries["v"].distance == b.summaries["v"].distance
    assert np.all(a.cells["v"].hi - a.cells["v"].lo < b.cells["v"].hi - b.cells["v"].lo)
    assert a.summaries["v"].cov <= b.summaries["v"].cov


def test_cell_diagnostics_errors(rng):
    res = fake_result(rng.standard_normal(5), rng.standard_normal((30, 5)))
    for level in (0.0, 1.0, 1.5):
        with pytest.raises(DiagnosticError):
            cell_diagnostics(res, level)
    with pytest.raises(DiagnosticError):
        cell_diagnostics(res, 0.95, ["w"])
    with pytest.warns(UserWarning):
        cell_diagnostics(fake_result(np.zeros(3), rng.standard_normal((5, 3))), 0.95)


def test_engine_without_where_has_nothing_to_check():
    d = toy_data()
    res = run_fcs(d, TOY.replace(m=2))
    with pytest.raises(DiagnosticError):
        cell_diagnostics(res, 0.95)


# -- deviance ----------------------------------------------------------------

def test_deviance_near_perfect_and_floor():
    m = 20
    res = fake_result([1.0, 0.0, 1.0], np.tile([1.0, 0.0, 1.0], (m, 1)), ColumnKind.BINARY)
    dev = deviance_summary(res, "v")
    np.testing.assert_allclose(dev.p_hat, [1 - 1 / (2 * m), 1 / (2 * m), 1 - 1 / (2 * m)])
    want = math.sqrt(-2 * math.log(1 - 1 / (2 * m)))
    np.testing.assert_allclose(dev.residuals, [want, -want, want])
    assert dev.mean_squared == pytest.approx(want ** 2)


def test_deviance_residual_formula():
    y = np.array([1.0, 0.0])
    p = np.array([0.3, 0.3])
    np.testing.assert_allclose(deviance_residuals(y, p), [math.sqrt(-2 * math.log(0.3)), -math.sqrt(-2 * math.log(0.7))])


def test_deviance_needs_binary(rng):
    with pytest.raises(DiagnosticError):
        deviance_summary(fake_result(rng.standard_normal(3), rng.standard_normal((4, 3))), "v")


# -- p-values ------------------------------------------------------------------

def test_pvalue_tie_and_extremes(rng):
    assert ppc_pvalue(np.ones(10), np.ones(10)).p_value == 1.0
    assert ppc_pvalue(5.0, np.arange(5.0)).p_value == 0.0
    with pytest.raises(DiagnosticError):
        ppc_pvalue(0.0, [])
    t = rng.standard_normal(10_000)
    assert 0.47 <= ppc_pvalue(0.0, t).p_value <= 0.53


def test_p_com_constant_statistic_is_one():
    assert p_b_com(toy_data(), TOY, lambda ds: 3.0, 20).p_value == 1.0


def test_p_com_matches_closed_form_oracle():
    d = toy_data()
    got = p_b_com(d, TOY, sample_mean, 500).p_value
    want = oracle_p_com(d, 4000, seed=1)
    assert 0.35 <= got <= 0.65
    assert abs(got - want) < 0.1


def test_p_ecom_toy_and_single_inner_draw():
    d = toy_data()
    p_ecom = p_b_ecom(d, TOY, sample_mean, 200, 20).p_value
    assert 0.35 <= p_ecom <= 0.65
    p_com = p_b_com(d, TOY, sample_mean, 200).p_value
    p_one = p_b_ecom(d, TOY, sample_mean, 200, 1).p_value
    assert abs(p_one - p_com) < 0.1


def test_statistic_blind_to_imputations_gives_identical_indicators():
    d = toy_data()
    obs = d["y"].observed

    def observed_mean(ds):
        return float(ds["y"].values[obs].mean())

    a = p_b_com(d, TOY, observed_mean, 60)
    b = p_b_ecom(d, TOY, observed_mean, 60, 3)
    assert round(a.p_value * 60) == round(b.p_value * 60)


def test_pvalue_argument_checks():
    with pytest.raises(DiagnosticError):
        p_b_com(toy_data(), TOY, sample_mean, 0)
    with pytest.raises(DiagnosticError):
        p_b_ecom(toy_data(), TOY, sample_mean, 5, 0)
