import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelgmm.results import lag_name
from panelgmm.simulation import (ESTIMATORS, TESTS, DgpConfig, default_spec, monte_carlo,
                                 replication_seed, simulate_dynamic_panel)


def test_same_seed_same_panel():
    cfg = DgpConfig(n_entities=10, n_periods=5, seed=42)
    assert simulate_dynamic_panel(cfg) == simulate_dynamic_panel(cfg)
    assert simulate_dynamic_panel(cfg) != simulate_dynamic_panel(cfg.with_seed(43))


def test_shape_labels_and_truth():
    cfg = DgpConfig(n_entities=12, n_periods=6, theta=(1.0, -2.0), seed=1, first_period=2008)
    p = simulate_dynamic_panel(cfg, include_truth=True)
    assert p.shape == (12, 6)
    assert p.entities[0] == "e001" and p.periods == tuple(range(2008, 2014))
    assert set(p.series_names) == {"y", "x1", "x2", "alpha", "eps"}
    # the recursion holds exactly on the kept window
    y, x1, x2, a, e = (p[n] for n in ("y", "x1", "x2", "alpha", "eps"))
    lhs = y[:, 1:]
    rhs = a[:, 1:] + 0.5 * y[:, :-1] + 1.0 * x1[:, 1:] - 2.0 * x2[:, 1:] + e[:, 1:]
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    np.testing.assert_allclose(a, np.broadcast_to(a[:, :1], a.shape))


def test_groupwise_het_and_error_ar1():
    cfg = DgpConfig(n_entities=400, n_periods=30, groupwise_het_factor=9.0, error_ar1=0.6, seed=3)
    e = simulate_dynamic_panel(cfg, include_truth=True)["eps"]
    ratio = e[200:].var() / e[:200].var()
    assert ratio == pytest.approx(9.0, rel=0.1)
    r = np.sum(e[:, 1:] * e[:, :-1]) / np.sum(e[:, :-1] ** 2)
    assert r == pytest.approx(0.6, abs=0.03)


def test_endogeneity_and_effect_loading():
    cfg = DgpConfig(n_entities=2000, n_periods=5, endogeneity_corr=0.5, regressor_effect_loading=1.0,
                    seed=4, omega=0.0)
    p = simulate_dynamic_panel(cfg, include_truth=True)
    x, e, a = p["x1"], p["eps"], p["alpha"]
    innov_x = x[:, 1:] - 0.5 * x[:, :-1] - a[:, 1:]
    assert np.corrcoef(innov_x.ravel(), e[:, 1:].ravel())[0, 1] == pytest.approx(0.5, abs=0.03)
    assert np.corrcoef(x.mean(axis=1), a[:, 0])[0, 1] > 0.5


@pytest.mark.parametrize("kw", [dict(omega=1.0), dict(n_entities=0), dict(idiosyncratic_sd=0.0),
                                dict(endogeneity_corr=2.0), dict(groupwise_het_factor=0.5),
                                dict(error_ar1=-1.0), dict(theta=(1.0, 2.0), regressor_persistence=(0.1, 0.2, 0.3)),
                                dict(seed=-1)])
def test_invalid_config(kw):
    with pytest.raises(ValueError, match="invalid DgpConfig"):
        DgpConfig(**kw)


def test_config_dict():
    d = DgpConfig(theta=(1.0, 2.0)).to_dict()
    assert d["theta"] == [1.0, 2.0] and d["regressor_persistence"] == [0.5, 0.5]


def test_replication_seed():
    assert replication_seed(0b1010, 0b0110) == 0b1100
    assert replication_seed(2**64 - 1, 1) == 2**64 - 2


def test_default_spec():
    s = default_spec(DgpConfig(omega=0.0), "fe")
    assert s.dep_lag_order == 0 and s.regressors == ("x1",)
    s = default_spec(DgpConfig(omega=0.0), "diff_gmm")
    assert s.dep_lag_order == 1 and len(s.instrument_directives) == 1


def test_monte_carlo_summary_and_workers():
    cfg = DgpConfig(n_entities=40, n_periods=6, seed=11)
    a = monte_carlo(cfg, "diff_gmm", replications=12, tests=("sargan", "ar2"))
    b = monte_carlo(cfg, "diff_gmm", replications=12, tests=("sargan", "ar2"), workers=2)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(a.estimates, b.estimates)
    c = a.coefficient(lag_name("y", 1))
    assert c.true_value == 0.5
    assert c.mean_bias == pytest.approx(np.mean(a.estimates[:, 0]) - 0.5)
    assert 0 <= c.coverage <= 1
    assert a.test("sargan").n_defined == 12
    assert a.failure_count == 0
    with pytest.raises(KeyError):
        a.coefficient("zz")


def test_monte_carlo_records_failures():
    calls = []

    def flaky(panel, spec):
        from panelgmm.static import pooled_ols
        calls.append(1)
        if panel["y"][0, 0] > 0:
            raise np.linalg.LinAlgError("singular")
        return pooled_ols(panel, spec)

    cfg = DgpConfig(n_entities=10, n_periods=4, seed=2)
    s = monte_carlo(cfg, flaky, replications=20)
    assert 0 < s.failure_count < 20
    assert all(v.startswith("LinAlgError") for v in s.failures.values())
    assert s.estimates.shape[0] == 20 - s.failure_count


def test_monte_carlo_argument_errors():
    cfg = DgpConfig(n_entities=10, n_periods=4)
    with pytest.raises(ValueError):
        monte_carlo(cfg, "ols2")
    with pytest.raises(ValueError):
        monte_carlo(cfg, "fe", replications=0)
    with pytest.raises(ValueError):
        monte_carlo(cfg, "fe", tests=("nope",))


def test_registry_names():
    assert set(ESTIMATORS) == {"pols", "fe", "re", "fgls", "diff_gmm"}
    assert {"sargan", "ar1", "ar2", "wooldridge", "breusch_pagan", "modified_wald", "bp_lm",
            "hausman", "f_test", "durbin", "wu_hausman"} <= set(TESTS)


def test_fe_nickell_bias_sign():
    cfg = DgpConfig(n_entities=100, n_periods=7, seed=5)
    s = monte_carlo(cfg, "fe", replications=30)
    assert s.coefficient("L.y").mean_bias < -0.05


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), n=st.integers(1, 8), t=st.integers(1, 6))
def test_any_seed_reproducible(seed, n, t):
    cfg = DgpConfig(n_entities=n, n_periods=t, seed=seed, burn_in=5)
    a, b = simulate_dynamic_panel(cfg), simulate_dynamic_panel(cfg)
    assert a == b
    assert not any(np.isnan(a[s]).any() for s in a.series_names)
    assert all(math.isfinite(v) for v in a["y"].ravel())
