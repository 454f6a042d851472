import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from ppcimpute.amputation import (
    AmputationError, AmputePattern, AmputeSpec, Mechanism, ampute, compute_wss,
    missing_probabilities, raw_wss, solve_intercept,
)
from ppcimpute.data import Dataset, RngStream


def normal_data(n, seed=0):
    g = np.random.default_rng(seed)
    x1 = g.standard_normal(n)
    return Dataset.from_arrays({"x1": x1, "x2": g.standard_normal(n), "y": x1 + g.standard_normal(n)})


def test_raw_score_is_weighted_sum():
    d = Dataset.from_arrays({"x1": [2.0, 0.0], "x2": [3.0, 1.0]})
    assert raw_wss(d, {"x1": 1, "x2": 1})[0] == 5.0


def test_standardized_scores_use_sample_sd():
    d = Dataset.from_arrays({"x": [0.0, 1.0, 2.0, 3.0]})
    # hand oracle: mean 1.5, sample sd sqrt(5/3)
    sd = math.sqrt(((0 - 1.5) ** 2 + (1 - 1.5) ** 2 + (2 - 1.5) ** 2 + (3 - 1.5) ** 2) / 3)
    want = [(v - 1.5) / sd for v in (0, 1, 2, 3)]
    np.testing.assert_allclose(compute_wss(d, {"x": 1}), want, rtol=1e-12)
    np.testing.assert_allclose(want, [-1.1619, -0.3873, 0.3873, 1.1619], atol=1e-4)


def test_weights_are_relative():
    d = normal_data(200)
    np.testing.assert_allclose(compute_wss(d, {"x1": 2, "x2": 2}), compute_wss(d, {"x1": 1, "x2": 1}))


def test_intercept_hits_target_mean():
    s = np.random.default_rng(3).standard_normal(500)
    for prop in (0.05, 0.3, 0.8):
        c = solve_intercept(s, prop)
        assert abs(expit(s + c).mean() - prop) <= 1e-6


def test_mcar_realized_fraction():
    d = normal_data(1000)
    out = ampute(d, AmputeSpec(AmputePattern(("y",)), "mcar", 0.3), RngStream(1))
    frac = out["y"].n_missing / 1000
    assert abs(frac - 0.3) < 0.05


def test_marr_hits_upper_tail_harder():
    d = normal_data(5000)
    spec = AmputeSpec(AmputePattern(("y",), {"x1": 1.0}), "marr", 0.5)
    out = ampute(d, spec, RngStream(2))
    x = d["x1"].values
    miss = ~out["y"].observed
    lo, hi = np.quantile(x, [0.1, 0.9])
    assert miss[x >= hi].mean() > miss[x <= lo].mean()


def test_marr_probability_monotone_in_score():
    d = normal_data(300)
    spec = AmputeSpec(AmputePattern(("y",), {"x1": 1.0, "x2": 0.5}), "marr", 0.4)
    prob = missing_probabilities(d, spec)
    score = compute_wss(d, spec.pattern.weights)
    order = np.argsort(score)
    assert np.all(np.diff(prob[order]) >= 0)


def test_tiny_proportion_amputes_almost_nothing():
    d = normal_data(1000)
    out = ampute(d, AmputeSpec(AmputePattern(("y",)), "mcar", 1e-9), RngStream(3))
    assert out["y"].n_missing <= 1


def test_joint_targets_and_untouched_columns():
    d = normal_data(400)
    out = ampute(d, AmputeSpec(AmputePattern(("x1", "x2"), {"y": 1}), "marr", 0.3), RngStream(4))
    assert np.array_equal(out["x1"].observed, out["x2"].observed)
    assert out["y"].observed.all()
    np.testing.assert_array_equal(out["y"].values, d["y"].values)
    keep = out["x1"].observed
    np.testing.assert_array_equal(out["x1"].values[keep], d["x1"].values[keep])


def test_deterministic_under_seed():
    d = normal_data(300)
    spec = AmputeSpec(AmputePattern(("y",), {"x1": 1}), "marr", 0.3)
    assert ampute(d, spec, RngStream(9)).equals(ampute(d, spec, RngStream(9)))


def test_realized_proportion_large_n():
    n, p = 100_000, 0.3
    d = normal_data(n, seed=5)
    for mech, w in (("mcar", {}), ("marr", {"x1": 1.0})):
        out = ampute(d, AmputeSpec(AmputePattern(("y",), w), mech, p), RngStream(6))
        sd = math.sqrt(p * (1 - p) / n)
        assert abs(out["y"].n_missing / n - p) < 3 * sd


@pytest.mark.parametrize("kwargs", [
    dict(pattern=AmputePattern(("y",)), mechanism="marr", proportion=0.3),
    dict(pattern=AmputePattern(("y",), {"x1": 0.0}), mechanism="marr", proportion=0.3),
    dict(pattern=AmputePattern(("y",)), mechanism="mcar", proportion=0.0),
    dict(pattern=AmputePattern(("y",)), mechanism="mcar", proportion=1.0),
])
def test_invalid_specs(kwargs):
    with pytest.raises(AmputationError):
        AmputeSpec(**kwargs)


def test_runtime_errors():
    with pytest.raises(AmputationError):
        AmputePattern(())
    d = Dataset.from_arrays({"x": [1.0, 1.0, 1.0], "y": [1.0, 2.0, 3.0]})
    with pytest.raises(AmputationError):
        missing_probabilities(d, AmputeSpec(AmputePattern(("y",), {"x": 1}), "marr", 0.3))
    inc = Dataset.from_arrays({"x": [1.0, np.nan, 2.0], "y": [1.0, 2.0, 3.0]})
    with pytest.raises(AmputationError):
        ampute(inc, AmputeSpec(AmputePattern(("x",)), "mcar", 0.3), RngStream(1))
    with pytest.raises(AmputationError):
        raw_wss(inc, {"x": 1})
    with pytest.raises(KeyError):
        raw_wss(d, {"nope": 1})


@given(st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_ampute_never_touches_other_cells(prop, seed):
    d = normal_data(60, seed=1)
    out = ampute(d, AmputeSpec(AmputePattern(("y",), {"x1": 1}), Mechanism.MARR, prop), RngStream(seed))
    for name in ("x1", "x2"):
        np.testing.assert_array_equal(out[name].values, d[name].values)
    assert not (out["y"].observed & ~d["y"].observed).any()
