import csv

import numpy as np
import pytest
from scipy import integrate

from ppcimpute.amputation import AmputeSpec, ampute
from ppcimpute.data import ColumnKind, Dataset, RngStream
from ppcimpute.engine import EngineConfig, MultiplyImputed, Replicates, replication_mask, run_fcs
from ppcimpute.imputers import ImputerSpec
from ppcimpute.plots import (
    DENSITY_HEADER, DEVIANCE_HEADER, DISTRIBUTION_HEADER, SCATTER_HEADER, PlotDataError,
    density_series, distribution_rows, emit_density_data, emit_deviance_plot,
    emit_distribution_plot, emit_scatter_data, silverman_bandwidth,
)
from ppcimpute.ppc import cell_diagnostics, deviance_summary
from ppcimpute.simulate import PATTERNS, Scenario, gen_scenario1, gen_scenario3


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def quad_run():
    data = gen_scenario1(400, RngStream(1))
    am = ampute(data, AmputeSpec(PATTERNS[Scenario.QUAD_OUTCOME], "marr", 0.3), RngStream(2))
    specs = {"y": ImputerSpec("norm", ["x", "x2"])}
    return run_fcs(am, EngineConfig(m=5, maxit=1, specs=specs, seed=3, where=replication_mask(am, ["y"])))


def test_distribution_file_sorted_and_exact(tmp_path, quad_run):
    report = cell_diagnostics(quad_run, 0.75)
    p = tmp_path / "dist.csv"
    rows = emit_distribution_plot(report, "y", p)
    header, body = read(p)
    assert tuple(header) == DISTRIBUTION_HEADER
    assert len(body) == report.summaries["y"].n_cells
    means = [float(r[1]) for r in body]
    assert means == sorted(means)
    assert [int(r[0]) for r in body] == list(range(1, len(body) + 1))
    for r, parsed in zip(rows, body):
        assert float(parsed[1]) == r.rep_mean and float(parsed[4]) == r.observed
        assert (parsed[5] == "1") == (r.lo <= r.observed <= r.hi)
    with pytest.raises(PlotDataError):
        emit_distribution_plot(report, "x", p)


def test_distribution_ties_are_stable():
    data = Dataset.from_arrays({"v": [3.0, 1.0, 2.0]})
    rep = Replicates("v", np.arange(3), np.array([3.0, 1.0, 2.0]), np.zeros((4, 3)))
    res = MultiplyImputed(data, EngineConfig(m=4, specs={}), [data] * 4, {"v": rep}, ["v"], np.empty(0))
    rows = distribution_rows(cell_diagnostics(res, 0.75), "v")
    assert [r.observed for r in rows] == [3.0, 1.0, 2.0]


def test_single_cell_report_gives_one_row(tmp_path):
    data = Dataset.from_arrays({"v": [0.5]})
    rep = Replicates("v", np.array([0]), np.array([0.5]), np.linspace(0, 1, 30)[:, None])
    res = MultiplyImputed(data, EngineConfig(m=30, specs={}), [data] * 30, {"v": rep}, ["v"], np.empty(0))
    emit_distribution_plot(cell_diagnostics(res, 0.95), "v", tmp_path / "one.csv")
    assert len(read(tmp_path / "one.csv")[1]) == 1


def test_density_series_integrate_to_one(tmp_path, quad_run):
    grid, dens = emit_density_data(quad_run, "y", tmp_path / "dens.csv")
    assert grid.size == 512 and dens.shape == (6, 512)
    for k in range(dens.shape[0]):
        assert abs(integrate.trapezoid(dens[k], grid) - 1) < 1e-3
    header, body = read(tmp_path / "dens.csv")
    assert tuple(header) == DENSITY_HEADER and len(body) == 6 * 512
    assert float(body[700][2]) == dens[1, 700 - 512]


def test_silverman_matches_r_rule():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    sd = x.std(ddof=1)
    iqr = np.quantile(x, 0.75) - np.quantile(x, 0.25)
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 5 ** -0.2)
    with pytest.raises(PlotDataError):
        silverman_bandwidth(np.array([1.0]))


def test_density_rejects_binary():
    data = gen_scenario3(200, RngStream(4))
    am = ampute(data, AmputeSpec(PATTERNS[Scenario.LOGISTIC_OUTCOME], "mcar", 0.3), RngStream(5))
    res = run_fcs(am, EngineConfig(m=2, maxit=1, specs={"y": ImputerSpec("logreg", ["x", "z"])}, seed=1))
    with pytest.raises(PlotDataError):
        density_series(res, "y")


def test_scatter_panels(tmp_path, quad_run):
    p = tmp_path / "sc.csv"
    rows = emit_scatter_data(quad_run, "x", "y", p)
    header, body = read(p)
    assert tuple(header) == SCATTER_HEADER and len(body) == len(rows)
    data = quad_run.data
    obs = data["y"].observed
    panel0 = [r for r in rows if r[0] == 0]
    assert len(panel0) == obs.sum()
    for k in range(1, quad_run.m + 1):
        panel = [r for r in rows if r[0] == k]
        assert len(panel) == data.n
        kept = np.array([r[3] for r, o in zip(panel, obs) if o])
        np.testing.assert_array_equal(kept, [r[3] for r in panel0])
        assert sum(r[1] for r in panel) == (~obs).sum()
    with pytest.raises(PlotDataError):
        emit_scatter_data(quad_run, "x", "nope", p)


def test_deviance_plot_rows(tmp_path):
    data = gen_scenario3(300, RngStream(6))
    am = ampute(data, AmputeSpec(PATTERNS[Scenario.LOGISTIC_OUTCOME], "mcar", 0.3), RngStream(7))
    res = {}
    for label, preds in (("good", ["x", "z"]), ("bad", ["z"])):
        cfg = EngineConfig(m=20, maxit=1, specs={"y": ImputerSpec("logreg", preds)}, seed=8,
                           where=replication_mask(am, ["y"]))
        res[label] = deviance_summary(run_fcs(am, cfg), "y")
    p = tmp_path / "dev.csv"
    rows = emit_deviance_plot(res["good"], p)
    header, body = read(p)
    assert tuple(header) == DEVIANCE_HEADER
    assert len(body) == am["y"].observed.sum() == len(rows)
    assert [float(r[2]) for r in body] == [r[2] for r in rows]
    assert np.abs(res["good"].residuals).mean() < np.abs(res["bad"].residuals).mean()
