import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from statsmodels.stats.diagnostic import het_breuschpagan
from statsmodels.tsa.adfvalues import mackinnoncrit, mackinnonp
from statsmodels.tsa.stattools import adfuller

from panelgmm import diagnostics as dg
from panelgmm.panel import PanelDataset
from panelgmm.results import ModelSpec
from panelgmm.static import fixed_effects, pooled_ols, random_effects

from .conftest import static_panel

SPEC2 = ModelSpec("y", ("x1", "x2"))


# -- autocorrelation ----------------------------------------------------------

def wooldridge_oracle(p):
    dy = np.diff(p["y"], axis=1)
    dx = np.stack([np.diff(p["x1"], axis=1), np.diff(p["x2"], axis=1)], axis=-1)
    b = np.linalg.lstsq(dx.reshape(-1, 2), dy.ravel(), rcond=None)[0]
    e = dy - dx @ b
    x, y = e[:, :-1], e[:, 1:]
    rho = np.sum(x * y) / np.sum(x * x)
    u = y - rho * x
    G = e.shape[0]
    score = np.sum(x * u, axis=1)
    var = G / (G - 1) * np.sum(score ** 2) / np.sum(x * x) ** 2
    return (rho + 0.5) ** 2 / var, rho, G


def test_wooldridge_oracle(rng):
    p = static_panel(rng, n_entities=25, n_periods=8)
    t = dg.wooldridge_autocorr_test(p, SPEC2)
    f, rho, G = wooldridge_oracle(p)
    assert t.statistic == pytest.approx(f, rel=1e-9)
    assert t.extra["rho"] == pytest.approx(rho, rel=1e-9)
    assert (t.distribution.df1, t.distribution.df2) == (1, G - 1)
    assert t.p_value == pytest.approx(stats.f(1, G - 1).sf(f), rel=1e-8)


def test_wooldridge_detects_ar1_errors():
    rng = np.random.default_rng(0)
    N, T = 60, 10
    e = np.zeros((N, T))
    e[:, 0] = rng.normal(size=N)
    for t in range(1, T):
        e[:, t] = 0.8 * e[:, t - 1] + rng.normal(size=N)
    x = rng.normal(size=(N, T))
    p = PanelDataset(range(N), range(T), {"y": x + e, "x": x})
    t = dg.wooldridge_autocorr_test(p, ModelSpec("y", ("x",)))
    assert t.decision == "Autocorrelation"


def test_wooldridge_needs_two_entities(rng):
    p = static_panel(rng, n_entities=1, n_periods=6)
    with pytest.raises(ValueError):
        dg.wooldridge_autocorr_test(p, SPEC2)


# -- heteroskedasticity -------------------------------------------------------

def test_breusch_pagan_matches_statsmodels(rng):
    p = static_panel(rng, n_entities=40)
    pols = pooled_ols(p, SPEC2)
    t = dg.breusch_pagan_het_test(pols)
    lm, lm_p, _, _ = het_breuschpagan(pols.resid, sm.add_constant(pols.fitted), robust=False)
    assert t.statistic == pytest.approx(lm, rel=1e-9)
    assert t.p_value == pytest.approx(lm_p, rel=1e-8)


def test_breusch_pagan_constant_fit_undefined():
    p = PanelDataset(range(4), range(3), {"y": np.arange(12.0).reshape(4, 3), "x": np.ones((4, 3))})
    pols = pooled_ols(p, ModelSpec("y", (), include_intercept=True))
    t = dg.breusch_pagan_het_test(pols)
    assert not t.defined and "constant" in t.note


def test_modified_wald_oracle(rng):
    p = static_panel(rng, n_entities=20, n_periods=9)
    fe = fixed_effects(p, SPEC2)
    t = dg.modified_wald_groupwise_het(fe)
    e = fe.resid.reshape(20, 9)
    s2i = (e ** 2).mean(axis=1)
    s2 = (e ** 2).mean()
    V = ((e ** 2 - s2i[:, None]) ** 2).sum(axis=1) / (9 * 8)
    assert t.statistic == pytest.approx(np.sum((s2i - s2) ** 2 / V), rel=1e-10)
    assert t.distribution.df1 == 20


def test_modified_wald_excludes_degenerate_entities(rng):
    p = static_panel(rng, n_entities=10, n_periods=5)
    y = np.array(p["y"])
    y[0, 2:] = np.nan  # entity with two rows has e_1 = -e_2 and V_i = 0
    p = p.with_series(y=y)
    fe = fixed_effects(p, SPEC2)
    with pytest.warns(dg.DiagnosticWarning, match="excluded"):
        t = dg.modified_wald_groupwise_het(fe)
    assert t.distribution.df1 == 9


def test_bp_lm_balanced_formula(rng):
    p = static_panel(rng, n_entities=30, n_periods=5, fe_sd=0.7)
    pols = pooled_ols(p, SPEC2)
    t = dg.bp_lm_re_test(pols)
    e = pols.resid.reshape(30, 5)
    a = np.sum(e.sum(axis=1) ** 2) / np.sum(e ** 2) - 1
    lm = 30 * 5 / (2 * 4) * a ** 2
    assert t.statistic == pytest.approx(lm, rel=1e-10)
    assert t.p_value == pytest.approx(0.5 * stats.chi2(1).sf(lm), rel=1e-8, abs=1e-300)
    assert t.decision == "Random Effect"


def test_bp_lm_one_sided():
    hit = 0
    for seed in range(30):
        p = static_panel(np.random.default_rng(seed), n_entities=20, n_periods=4, fe_sd=0.0)
        t = dg.bp_lm_re_test(pooled_ols(p, SPEC2))
        if t.extra["two_sided_lm"] > 0 and t.statistic == 0.0:
            hit += 1
            assert t.p_value == 1.0 and t.decision == "Pooled OLS"
    assert hit > 0


# -- specification ------------------------------------------------------------

def test_hausman_oracle(rng):
    p = static_panel(rng, n_entities=40, corr=0.5)
    fe, re = fixed_effects(p, SPEC2), random_effects(p, SPEC2)
    t = dg.hausman_test(fe, re)
    q = fe.params[:2] - re.params[:2]
    V = fe.cov[:2, :2] - re.cov[:2, :2]
    assert t.statistic == pytest.approx(q @ np.linalg.solve(V, q), rel=1e-8)
    assert t.distribution.df1 == 2 and t.extra["rank"] == 2
    assert t.extra["compared"] == ["x1", "x2"]


def test_hausman_decisions():
    rng = np.random.default_rng(1)
    endo = static_panel(rng, n_entities=60, corr=1.5)
    t = dg.hausman_test(fixed_effects(endo, SPEC2), random_effects(endo, SPEC2))
    assert t.decision == "Fixed Effect"
    exo = static_panel(np.random.default_rng(2), n_entities=60, corr=0.0)
    t = dg.hausman_test(fixed_effects(exo, SPEC2), random_effects(exo, SPEC2))
    assert t.decision == "Random Effect"


def test_hausman_ignores_period_dummies(rng):
    p = static_panel(rng)
    t = dg.hausman_test(fixed_effects(p, SPEC2, period_fixed=True), random_effects(p, SPEC2))
    assert t.extra["compared"] == ["x1", "x2"]


# -- endogeneity --------------------------------------------------------------

def endo_panel(rng, corr, N=50, T=6):
    z = rng.normal(size=(N, T))
    v = rng.normal(size=(N, T))
    u = corr * v + math.sqrt(1 - corr ** 2) * rng.normal(size=(N, T))
    x1 = z + v
    x2 = rng.normal(size=(N, T))
    return PanelDataset(range(N), range(T), {"y": x1 + x2 + u, "x1": x1, "x2": x2, "z": z})


def test_dwh_augmented_regression_identity(rng):
    p = endo_panel(rng, 0.3)
    durbin, wh = dg.dwh_endogeneity_test(p, SPEC2, "x1", ["z"])
    y, x1, x2, z = (p[n].ravel() for n in ("y", "x1", "x2", "z"))
    first = sm.OLS(x1, sm.add_constant(np.column_stack([x2, z]))).fit()
    X = sm.add_constant(np.column_stack([x1, x2]))
    aug = sm.OLS(y, np.column_stack([X, first.resid])).fit()
    restr = sm.OLS(y, X).fit()
    assert wh.statistic == pytest.approx(aug.tvalues[-1] ** 2, rel=1e-9)
    assert durbin.statistic == pytest.approx(len(y) * (restr.ssr - aug.ssr) / restr.ssr, rel=1e-9)
    assert wh.distribution.df2 == len(y) - 4


def test_dwh_decisions_and_lagged_instruments():
    strong = endo_panel(np.random.default_rng(5), 0.7, N=100)
    d, w = dg.dwh_endogeneity_test(strong, SPEC2, "x1", ["z"])
    assert d.decision == w.decision == "Endo."
    exo = static_panel(np.random.default_rng(6), n_entities=50)
    d, w = dg.dwh_endogeneity_test(exo, SPEC2, "x1", ["L.x1"])
    assert d.defined and w.defined
    assert d.extra["first_stage_partial_r2"] >= 0


def test_dwh_input_errors(rng):
    p = endo_panel(rng, 0.0)
    with pytest.raises(ValueError, match="not a regressor"):
        dg.dwh_endogeneity_test(p, SPEC2, "z", ["x1"])
    with pytest.raises(ValueError):
        dg.dwh_endogeneity_test(p, SPEC2, "x1", [])
    with pytest.raises(ValueError):
        dg.dwh_endogeneity_test(p, SPEC2, "x1", ["x1"])
    p = p.with_series(k=np.ones(p.shape))
    with pytest.raises(ValueError):
        dg.dwh_endogeneity_test(p, SPEC2, "x1", ["k"])


# -- unit roots ---------------------------------------------------------------

@pytest.mark.parametrize("det,reg", [("constant", "c"), ("constant_trend", "ct")])
@pytest.mark.parametrize("lags", [0, 1, 3])
def test_adf_matches_statsmodels(det, reg, lags):
    rng = np.random.default_rng(lags)
    y = np.cumsum(rng.normal(size=60)) * 0.3 + rng.normal(size=60)
    ours = dg.adf_test(y, lags=lags, deterministic=det, finite_sample=False)
    ref = adfuller(y, maxlag=lags, autolag=None, regression=reg)
    assert ours.statistic == pytest.approx(ref[0], rel=1e-9)
    assert ours.p_value == pytest.approx(ref[1], rel=1e-9, abs=1e-15)
    assert ours.n_obs == ref[3]


@pytest.mark.parametrize("det,reg", [("constant", "c"), ("constant_trend", "ct")])
def test_mackinnon_p_matches_statsmodels(det, reg):
    for s in np.linspace(-20, 3, 93):
        assert dg.mackinnon_p(float(s), det) == pytest.approx(mackinnonp(s, regression=reg),
                                                              abs=1e-12)


@pytest.mark.parametrize("det,reg", [("constant", "c"), ("constant_trend", "ct")])
@pytest.mark.parametrize("nobs", [20, 48, 100])
def test_finite_sample_p_at_finite_critical_values(det, reg, nobs):
    crit = mackinnoncrit(N=1, regression=reg, nobs=nobs)
    for c, level in zip(crit, (0.01, 0.05, 0.10)):
        assert dg.mackinnon_p(float(c), det, nobs=nobs) == pytest.approx(level, abs=0.003)


def test_adf_errors():
    with pytest.raises(ValueError):
        dg.adf_test([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        dg.adf_test([1.0, np.nan] * 10)
    with pytest.raises(ValueError):
        dg.adf_test(np.arange(20.0), deterministic="trend")
    stat, p = dg.adf_test(np.random.default_rng(0).normal(size=40))
    assert stat < -2 and 0 <= p <= 1


def test_fisher_combine_formulas():
    p = np.array([0.01, 0.2, 0.5, 0.8, 0.03])
    N = p.size
    res = {t.extra["key"]: t for t in dg.fisher_combine(p)}
    P = -2 * np.log(p).sum()
    assert res["P"].statistic == pytest.approx(P)
    assert res["P"].p_value == pytest.approx(stats.chi2(2 * N).sf(P))
    Z = stats.norm.ppf(p).sum() / math.sqrt(N)
    assert res["Z"].statistic == pytest.approx(Z)
    assert res["Z"].p_value == pytest.approx(stats.norm.cdf(Z))
    k = 3 * (5 * N + 4) / (math.pi ** 2 * N * (5 * N + 2))
    L = math.sqrt(k) * np.log(p / (1 - p)).sum()
    assert res["L*"].statistic == pytest.approx(L)
    assert res["L*"].p_value == pytest.approx(stats.t(5 * N + 4).cdf(L))
    Pm = -np.sum(np.log(p) + 1) / math.sqrt(N)
    assert res["Pm"].statistic == pytest.approx(Pm)
    assert res["Pm"].p_value == pytest.approx(stats.norm.sf(Pm))


def test_fisher_all_ones_no_rejection():
    res = dg.fisher_combine(np.ones(10))
    P = res[0]
    assert P.statistic == pytest.approx(0.0, abs=1e-9)
    assert P.p_value == pytest.approx(1.0)
    assert not any(t.rejected for t in res)


def walk_panel(rng, N, T, phi=1.0):
    y = np.zeros((N, T))
    e = rng.normal(size=(N, T))
    y[:, 0] = e[:, 0] / (math.sqrt(1 - phi ** 2) if phi < 1 else 1)
    for t in range(1, T):
        y[:, t] = phi * y[:, t - 1] + e[:, t]
    return PanelDataset(range(N), range(T), {"y": y})


def test_fisher_unit_root_decisions():
    rng = np.random.default_rng(9)
    st_ = dg.fisher_unit_root(walk_panel(rng, 26, 50, 0.5), "y")
    assert st_.decision == "Stationary" and len(st_.per_entity) == 26
    rw = dg.fisher_unit_root(walk_panel(rng, 26, 50, 1.0), "y", policy="P")
    assert rw.test("P").p_value > 0.01
    with pytest.raises(KeyError):
        rw.test("IPS")


def test_fisher_unit_root_skips_and_runs(rng):
    p = walk_panel(rng, 5, 30, 0.5)
    y = np.array(p["y"])
    y[0, 3:] = np.nan
    y[1, 10] = np.nan  # longest run is periods 11..29
    p = p.with_series(y=y)
    rep = dg.fisher_unit_root(p, "y")
    assert rep.skipped == ["0"]
    assert [r.n_obs for r in rep.per_entity][0] == 19 - 2
    with pytest.raises(ValueError, match="need at least 2"):
        dg.fisher_unit_root(p.select_entities([0]), "y")
    with pytest.raises(ValueError, match="policy"):
        dg.fisher_unit_root(p, "y", policy="none")


@settings(max_examples=100, deadline=None)
@given(p=st.lists(st.floats(1e-9, 1 - 1e-9), min_size=1, max_size=40))
def test_fisher_p_values_are_probabilities(p):
    for t in dg.fisher_combine(p):
        assert 0.0 <= t.p_value <= 1.0


@settings(max_examples=60, deadline=None)
@given(p=st.lists(st.floats(1e-6, 1 - 1e-6), min_size=2, max_size=20), i=st.integers(0, 19),
       f=st.floats(0.01, 0.99))
def test_fisher_monotone_in_evidence(p, i, f):
    # lowering one p-value cannot weaken any combined statistic's evidence
    i %= len(p)
    q = list(p)
    q[i] = p[i] * f
    a = {t.extra["key"]: t.p_value for t in dg.fisher_combine(p)}
    b = {t.extra["key"]: t.p_value for t in dg.fisher_combine(q)}
    for k in a:
        assert b[k] <= a[k] + 1e-12


@settings(max_examples=60, deadline=None)
@given(s=st.floats(-30, 5), nobs=st.integers(10, 500))
def test_mackinnon_p_monotone(s, nobs):
    assert dg.mackinnon_p(s, nobs=nobs) <= dg.mackinnon_p(s + 0.1, nobs=nobs) + 1e-12
