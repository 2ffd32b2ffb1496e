"""
Assumption tests run before the dynamic model: serial correlation,
heteroskedasticity, pooled/RE/FE specification, endogeneity and panel unit
roots.  Every test returns a :class:`~panelgmm.results.TestResult`.
"""
from __future__ import annotations

import math
import re
import statistics
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from ._linalg import lstsq
from .instruments import first_difference
from .panel import PanelDataset, shift
from .results import (CONST, PERIOD_PREFIX, EstimationResult, ModelSpec, TestResult, make_test,
                      undefined_test)
from .static import build_design

__all__ = [
    "DiagnosticWarning",
    "wooldridge_autocorr_test",
    "breusch_pagan_het_test",
    "modified_wald_groupwise_het",
    "bp_lm_re_test",
    "hausman_test",
    "dwh_endogeneity_test",
    "adf_test",
    "AdfResult",
    "mackinnon_p",
    "fisher_combine",
    "fisher_unit_root",
    "UnitRootEntity",
    "UnitRootReport",
]


class DiagnosticWarning(UserWarning):
    pass


def _warn(msg: str) -> None:
    warnings.warn(msg, DiagnosticWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# serial correlation


def wooldridge_autocorr_test(panel: PanelDataset, spec: ModelSpec, level: float = 0.05) -> TestResult:
    """Wooldridge test for first-order serial correlation in panel errors.

    Regress ``D.y`` on the differenced regressors without an intercept,
    then regress the residuals on their own lag.  Under no serial
    correlation in the level errors that slope is ``-0.5``; the test uses a
    variance clustered by entity and refers the squared t-ratio to
    ``F(1, N_g - 1)``.

    Raises
    ------
    ValueError
        Fewer than two entities contribute to the residual regression.
    """
    dpanel = first_difference(panel, [spec.dependent, *spec.regressors])
    d = build_design(dpanel, spec, intercept=False)
    if d.n == 0 or d.X.shape[1] == 0:
        raise ValueError("wooldridge_autocorr_test: no differenced observations with regressors")
    e = lstsq(d.X, d.y, d.names).resid
    cont = np.zeros(d.n, dtype=bool)
    cont[1:] = (d.entity[1:] == d.entity[:-1]) & (d.period[1:] == d.period[:-1] + 1)
    idx = np.flatnonzero(cont)
    groups = d.entity[idx]
    n_g = int(np.unique(groups).size)
    if n_g < 2:
        raise ValueError(
            "wooldridge_autocorr_test: needs at least 2 entities with 3 consecutive observations"
        )
    x = e[idx - 1]
    y = e[idx]
    sxx = float(x @ x)
    b = float(x @ y) / sxx
    u = y - b * x
    _, inv = np.unique(groups, return_inverse=True)
    score = np.bincount(inv, weights=x * u)
    # small-sample factor G/(G-1); (n-1)/(n-k) is 1 with a single slope
    var = n_g / (n_g - 1) * float(score @ score) / sxx ** 2
    f = (b + 0.5) ** 2 / var if var > 0 else math.inf
    return make_test(
        "Wooldridge test for autocorrelation", f, dist.f_dist(1, n_g - 1),
        h0="no first-order autocorrelation", reject="Autocorrelation",
        accept="No autocorrelation", level=level, rho=b,
    )


# ---------------------------------------------------------------------------
# heteroskedasticity


def breusch_pagan_het_test(pols: EstimationResult, level: float = 0.05) -> TestResult:
    """Breusch-Pagan / Cook-Weisberg test on the fitted values.

    ``u^2 / (SSR/n)`` is regressed on an intercept and the fitted values;
    half the explained sum of squares is chi-square(1) under constant
    variance.
    """
    name = "Breusch-Pagan test for heteroskedasticity"
    h0 = "constant variance (homoskedasticity)"
    e = np.asarray(pols.resid, dtype=float)
    yhat = np.asarray(pols.fitted, dtype=float)
    n = e.size
    spread = float(np.ptp(yhat)) if n else 0.0
    if n < 3 or spread <= 1e-12 * max(1.0, float(np.max(np.abs(yhat)))):
        return undefined_test(name, dist.chi_square(1), h0,
                              note="fitted values are constant; nothing to regress on", level=level)
    s2 = float(e @ e) / n
    if s2 <= 0:
        return undefined_test(name, dist.chi_square(1), h0, note="residuals are all zero",
                              level=level)
    g = e * e / s2
    aux = lstsq(np.column_stack([np.ones(n), yhat]), g, check=False)
    ess = float(((g - aux.resid - g.mean()) ** 2).sum())
    return make_test(name, ess / 2.0, dist.chi_square(1), h0=h0, reject="Heteroskedasticity",
                     accept="Homoskedasticity", level=level)


def modified_wald_groupwise_het(fe: EstimationResult, level: float = 0.05) -> TestResult:
    """Modified Wald test for groupwise heteroskedasticity after fixed effects.

    ``W = sum_i (s_i^2 - s^2)^2 / V_i`` with ``s_i^2`` the mean squared
    residual of entity ``i``, ``s^2`` the pooled mean and
    ``V_i = sum_t (e_it^2 - s_i^2)^2 / (T_i (T_i - 1))``; chi-square with
    one degree of freedom per entity used.

    Raises
    ------
    ValueError
        If no entity has a positive ``V_i``.
    """
    e = np.asarray(fe.resid, dtype=float)
    groups, inv, t_i = np.unique(fe.entity_idx, return_inverse=True, return_counts=True)
    e2 = e * e
    s2 = float(e2.mean())
    s2_i = np.bincount(inv, weights=e2) / t_i
    dev = np.bincount(inv, weights=(e2 - s2_i[inv]) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_i = dev / (t_i * (t_i - 1.0))
    # V_i is zero in exact arithmetic for two-row entities (e_1 = -e_2); compare to scale
    ok = (t_i >= 2) & (v_i > 1e-10 * s2_i ** 2)
    if not np.any(ok):
        raise ValueError("modified_wald_groupwise_het: no entity has a usable variance estimate")
    if not np.all(ok):
        _warn(f"modified Wald test: {int((~ok).sum())} entities excluded (zero or undefined V_i)")
    w = float(np.sum((s2_i[ok] - s2) ** 2 / v_i[ok]))
    if np.all(s2_i == s2_i[0]):
        # identical groups: the pooled mean differs from s_i^2 only by rounding
        w = 0.0
    return make_test(
        "Modified Wald test for groupwise heteroskedasticity", w, dist.chi_square(int(ok.sum())),
        h0="equal error variance across entities", reject="Heteroskedasticity",
        accept="Homoskedasticity", level=level,
    )


# ---------------------------------------------------------------------------
# specification


def bp_lm_re_test(pols: EstimationResult, level: float = 0.01) -> TestResult:
    """Breusch-Pagan Lagrange multiplier test for random effects.

    Baltagi-Li form for unbalanced panels,
    ``LM = (sum T_i)^2 / (2 sum T_i (T_i - 1)) * A^2`` with
    ``A = sum_i (sum_t e_it)^2 / sum e_it^2 - 1``.  The alternative
    ``sigma_u^2 > 0`` is one-sided, so the statistic is 0 when ``A < 0``,
    and it is referred to chibar2(01).  Entities with a single observation
    are left out.
    """
    e = np.asarray(pols.resid, dtype=float)
    _, inv, t_i = np.unique(pols.entity_idx, return_inverse=True, return_counts=True)
    keep = t_i[inv] >= 2
    if not np.any(keep):
        raise ValueError("bp_lm_re_test: every entity has a single observation")
    e = e[keep]
    _, inv, t_i = np.unique(np.asarray(pols.entity_idx)[keep], return_inverse=True,
                            return_counts=True)
    t_i = t_i.astype(float)
    sums = np.bincount(inv, weights=e)
    ssr = float(e @ e)
    if ssr <= 0:
        return undefined_test("Breusch-Pagan LM test for random effects", dist.chibar2_01(),
                              "no random effect (var(u_i) = 0)", note="residuals are all zero",
                              level=level)
    a = float(sums @ sums) / ssr - 1.0
    scale = t_i.sum() ** 2 / (2.0 * float(np.sum(t_i * (t_i - 1.0))))
    lm = scale * a * a if a > 0 else 0.0
    return make_test(
        "Breusch-Pagan LM test for random effects", lm, dist.chibar2_01(),
        h0="no random effect (var(u_i) = 0)", reject="Random Effect", accept="Pooled OLS",
        level=level, two_sided_lm=scale * a * a,
    )


def _comparable(names) -> list:
    return [n for n in names if n != CONST and not n.startswith(PERIOD_PREFIX)]


def hausman_test(fe: EstimationResult, re: EstimationResult, level: float = 0.01) -> TestResult:
    """Hausman contrast of fixed- and random-effects slopes.

    ``H = q' (V_FE - V_RE)^+ q`` over the coefficients the two fits share
    (intercept and period dummies excluded), using the Moore-Penrose
    inverse; chi-square with one degree of freedom per compared
    coefficient.  The rank of the variance difference is stored in
    ``extra['rank']``.
    """
    common = [n for n in _comparable(fe.names) if n in re.names]
    if not common:
        raise ValueError("hausman_test: no coefficients common to both fits")
    fi, ri = fe.index(common), re.index(common)
    q = fe.params[fi] - re.params[ri]
    v = fe.cov[np.ix_(fi, fi)] - re.cov[np.ix_(ri, ri)]
    v = 0.5 * (v + v.T)
    w, vecs = np.linalg.eigh(v)
    tol = max(v.shape) * np.finfo(float).eps * max(float(np.max(np.abs(w))), 1e-300)
    rank = int(np.sum(np.abs(w) > tol))
    pinv = (vecs[:, np.abs(w) > tol] / w[np.abs(w) > tol]) @ vecs[:, np.abs(w) > tol].T
    h = float(q @ pinv @ q)
    note = ""
    if np.any(w < -tol):
        note = "V_FE - V_RE is not positive semi-definite; generalized inverse used"
    if rank < len(common):
        note = (note + "; " if note else "") + f"variance difference has rank {rank} < {len(common)}"
    if h < 0:
        note = (note + "; " if note else "") + f"negative statistic {h:.6g} set to 0"
        h = 0.0
    return make_test(
        "Hausman test", h, dist.chi_square(len(common)),
        h0="no correlation between regressors and random effects",
        reject="Fixed Effect", accept="Random Effect", level=level, note=note,
        rank=rank, compared=common,
    )


# ---------------------------------------------------------------------------
# endogeneity

_LAGGED = re.compile(r"^L(\d*)\.(.+)$")


def _series_values(panel: PanelDataset, name: str) -> np.ndarray:
    m = _LAGGED.match(name)
    if m:
        k = int(m.group(1)) if m.group(1) else 1
        return shift(panel[m.group(2)], k)
    return panel[name]


def dwh_endogeneity_test(panel: PanelDataset, spec: ModelSpec, suspected: str, instruments,
                         level: float = 0.05) -> tuple[TestResult, TestResult]:
    """Durbin and Wu-Hausman tests that ``suspected`` is exogenous.

    The first stage regresses ``suspected`` on the excluded
    ``instruments`` (names may carry a lag prefix such as ``L.x``) and the
    other regressors; its residual ``v`` is added to the pooled structural
    regression.  With ``SSR_r`` and ``SSR_u`` from the structural regression
    without and with ``v``::

        Durbin     = n (SSR_r - SSR_u) / SSR_r                ~ chi2(1)
        Wu-Hausman = (SSR_r - SSR_u) / (SSR_u / (n - k - 1))  ~ F(1, n - k - 1)

    where ``k`` counts the structural coefficients.

    Raises
    ------
    ValueError
        If ``suspected`` is not a regressor, an instrument repeats it, or
        the instruments carry no information about it.
    """
    instruments = list(instruments)
    if suspected not in spec.regressors:
        raise ValueError(f"{suspected!r} is not a regressor of the specification")
    if not instruments:
        raise ValueError("at least one excluded instrument is required")
    if suspected in instruments:
        raise ValueError("the suspected regressor cannot instrument itself")
    d = build_design(panel, spec)
    zcols = [_series_values(panel, z) for z in instruments]
    zrows = np.column_stack([z[d.entity, d.period] for z in zcols])
    ok = ~np.isnan(zrows).any(axis=1)
    y, X, Zx = d.y[ok], d.X[ok], zrows[ok]
    n, k = X.shape
    j = d.names.index(suspected)
    exog = np.delete(X, j, axis=1)
    if n <= k + Zx.shape[1] + 1:
        raise ValueError("dwh_endogeneity_test: too few observations")
    first = lstsq(np.column_stack([exog, Zx]), X[:, j],
                  [*np.delete(np.array(d.names), j), *instruments])
    base = lstsq(exog, X[:, j], check=False)
    partial_r2 = 1.0 - first.ssr / base.ssr if base.ssr > 0 else 0.0
    if partial_r2 < 1e-10:
        raise ValueError(
            f"first stage is not identified: instruments explain none of {suspected!r} "
            f"(partial R2 = {partial_r2:.3g})"
        )
    v = first.resid
    ssr_r = lstsq(X, y, d.names, check=False).ssr
    ssr_u = lstsq(np.column_stack([X, v]), y, check=False).ssr
    diff = max(ssr_r - ssr_u, 0.0)
    durbin = n * diff / ssr_r
    df2 = n - k - 1
    wh = diff / (ssr_u / df2) if ssr_u > 0 else math.inf
    h0 = f"{suspected} is exogenous"
    common = dict(reject="Endo.", accept="Exo.", level=level, first_stage_partial_r2=partial_r2)
    return (
        make_test("Durbin test", durbin, dist.chi_square(1), h0=h0, **common),
        make_test("Wu-Hausman test", wh, dist.f_dist(1, df2), h0=h0, **common),
    )


# ---------------------------------------------------------------------------
# unit roots

# MacKinnon (1994) response-surface coefficients for one variable
_MACKINNON = {
    "constant": dict(max=2.74, min=-18.83, star=-1.61,
                     small=(2.1659, 1.4412, 0.038269),
                     large=(1.7339, 0.93202, -0.12745, -0.010368)),
    "constant_trend": dict(max=0.7, min=-16.18, star=-2.89,
                           small=(3.2512, 1.6047, 0.049588),
                           large=(2.5261, 0.61654, -0.37956, -0.060285)),
}


# MacKinnon (2010) finite-sample critical values at 1%, 5%, 10%:
# c(T) = b0 + b1/T + b2/T^2 + b3/T^3
_CRIT_2010 = {
    "constant": ((-3.43035, -6.5393, -16.786, -79.433),
                 (-2.86154, -2.8903, -4.234, -40.04),
                 (-2.56677, -1.5384, -2.809, 0.0)),
    "constant_trend": ((-3.95877, -9.0531, -28.428, -134.155),
                       (-3.41049, -4.3904, -9.036, -45.374),
                       (-3.12705, -2.5856, -3.925, -22.38)),
}


def _finite_sample_shift(stat: float, nobs: int, deterministic: str) -> float:
    # distance between asymptotic and T-sample critical values, interpolated in stat
    crit, shift_ = [], []
    for b0, b1, b2, b3 in _CRIT_2010[deterministic]:
        c = b0 + b1 / nobs + b2 / nobs ** 2 + b3 / nobs ** 3
        crit.append(c)
        shift_.append(b0 - c)
    return float(np.interp(stat, crit, shift_))


def mackinnon_p(stat: float, deterministic: str = "constant", nobs: int | None = None) -> float:
    """Approximate p-value of an ADF t-statistic.

    Uses the MacKinnon (1994) asymptotic response surface.  With ``nobs``
    the statistic is first moved by the gap between the asymptotic and the
    ``nobs``-sample critical values (MacKinnon 2010), interpolated between
    the 1%, 5% and 10% points, which removes most of the small-sample
    over-rejection of the asymptotic p-values.
    """
    try:
        c = _MACKINNON[deterministic]
    except KeyError:
        raise ValueError(f"unknown deterministic term {deterministic!r}") from None
    if nobs is not None and math.isfinite(stat):
        stat = stat + _finite_sample_shift(stat, nobs, deterministic)
    if stat > c["max"]:
        return 1.0
    if stat < c["min"]:
        return 0.0
    coef = c["small"] if stat <= c["star"] else c["large"]
    z = sum(b * stat ** i for i, b in enumerate(coef))
    return dist.cdf(dist.normal(), z)


@dataclass
class AdfResult:
    """ADF outcome; unpacks as ``(statistic, p_value)``."""

    statistic: float
    p_value: float
    lags_used: int
    n_obs: int
    deterministic: str = "constant"

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def adf_test(series, lags: int = 1, deterministic: str = "constant",
             finite_sample: bool = True) -> AdfResult:
    """Augmented Dickey-Fuller test.

    Regresses ``D.y_t`` on a constant (and trend), ``y_{t-1}`` and ``lags``
    lagged differences; the t-ratio on ``y_{t-1}`` is the statistic.  The
    p-value comes from :func:`mackinnon_p`, with the small-sample
    adjustment unless ``finite_sample`` is false.

    Raises
    ------
    ValueError
        Series shorter than ``lags + 4`` or leaving no residual degrees of
        freedom; missing values.
    """
    y = np.asarray(series, dtype=float)
    if deterministic not in _MACKINNON:
        raise ValueError(f"unknown deterministic term {deterministic!r}")
    if lags < 0:
        raise ValueError("lags must be >= 0")
    if np.isnan(y).any():
        raise ValueError("series contains missing values")
    n_param = 2 + lags + (deterministic == "constant_trend")
    n_obs = y.size - lags - 1
    if y.size < lags + 4 or n_obs <= n_param:
        raise ValueError(f"series of length {y.size} is too short for an ADF test with {lags} lags")
    dy = np.diff(y)
    target = dy[lags:]
    cols = [np.ones(n_obs), y[lags:-1]]
    cols += [dy[lags - j:-j] for j in range(1, lags + 1)]
    if deterministic == "constant_trend":
        cols.append(np.arange(1.0, n_obs + 1.0))
    X = np.column_stack(cols)
    fit = lstsq(X, target, check=False)
    s2 = fit.ssr / (n_obs - X.shape[1])
    se = math.sqrt(s2 * fit.xtx_inv[1, 1])
    stat = float(fit.params[1]) / se if se > 0 else -math.inf
    p = mackinnon_p(stat, deterministic, n_obs if finite_sample else None)
    return AdfResult(stat, p, lags, n_obs, deterministic)


@dataclass
class UnitRootEntity:
    entity: str
    adf_stat: float
    p_value: float
    lags_used: int
    n_obs: int


@dataclass
class UnitRootReport:
    """Per-entity ADF results and the four Fisher-type combinations."""

    variable: str
    per_entity: list
    combined: list
    decision: str
    policy: str
    level: float
    skipped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def test(self, key: str) -> TestResult:
        for t in self.combined:
            if t.extra.get("key") == key:
                return t
        raise KeyError(key)


_P_CLIP = 1e-12
_NORM = statistics.NormalDist()
POLICIES = ("all", "any", "majority", "P", "Z", "L*", "Pm")


def fisher_combine(p_values, level: float = 0.05) -> list:
    """Choi's four combinations of independent unit-root p-values.

    Returns tests keyed (``extra['key']``) ``P`` (inverse chi-square),
    ``Z`` (inverse normal), ``L*`` (inverse logit) and ``Pm`` (modified
    inverse chi-square).
    """
    p = np.asarray(p_values, dtype=float)
    if p.size < 1:
        raise ValueError("no p-values to combine")
    if np.any((p <= 0) | (p >= 1)):
        p = np.clip(p, _P_CLIP, 1.0 - _P_CLIP)
    N = p.size
    logs = np.log(p)
    P = -2.0 * math.fsum(logs)
    Z = math.fsum(_NORM.inv_cdf(float(v)) for v in p) / math.sqrt(N)
    logit = math.fsum(np.log(p / (1.0 - p)))
    L = logit * math.sqrt(3.0 * (5 * N + 4) / (math.pi ** 2 * N * (5 * N + 2)))
    Pm = math.fsum(-2.0 * logs - 2.0) / (2.0 * math.sqrt(N))
    h0 = "all panels contain unit roots"
    kw = dict(h0=h0, reject="Stationary", accept="Unit root", level=level)
    return [
        make_test("Inverse chi-squared", P, dist.chi_square(2 * N), key="P", **kw),
        make_test("Inverse normal", Z, dist.normal(), tail="lower", key="Z", **kw),
        make_test("Inverse logit", L, dist.student_t(5 * N + 4), tail="lower", key="L*", **kw),
        make_test("Modified inverse chi-squared", Pm, dist.normal(), key="Pm", **kw),
    ]


def _longest_run(row: np.ndarray) -> np.ndarray:
    best = (0, 0)
    start = None
    for t, ok in enumerate(np.append(~np.isnan(row), False)):
        if ok and start is None:
            start = t
        elif not ok and start is not None:
            if t - start > best[1] - best[0]:
                best = (start, t)
            start = None
    return row[best[0]:best[1]]


def _decide(tests, policy: str) -> str:
    rejected = {t.extra["key"]: t.rejected for t in tests}
    if policy == "all":
        ok = all(rejected.values())
    elif policy == "any":
        ok = any(rejected.values())
    elif policy == "majority":
        ok = sum(rejected.values()) > len(rejected) / 2
    else:
        ok = rejected[policy]
    return "Stationary" if ok else "Unit root"


def fisher_unit_root(panel: PanelDataset, variable: str, lags: int = 1,
                     deterministic: str = "constant", level: float = 0.05,
                     policy: str = "all", finite_sample: bool = True) -> UnitRootReport:
    """Fisher-type panel unit-root test from per-entity ADF p-values.

    Each entity's longest run of consecutive observations is tested with
    :func:`adf_test`; entities too short for it are skipped.  ``policy``
    turns the four combined tests into one decision: ``"all"`` (every
    combination rejects), ``"any"``, ``"majority"`` or a single key.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown decision policy {policy!r}; choose from {', '.join(POLICIES)}")
    arr = panel[variable]
    rows, skipped, notes = [], [], []
    for i, e in enumerate(panel.entities):
        run = _longest_run(arr[i])
        try:
            res = adf_test(run, lags, deterministic, finite_sample)
        except ValueError:
            skipped.append(e)
            continue
        rows.append(UnitRootEntity(e, res.statistic, res.p_value, lags, res.n_obs))
    if len(rows) < 2:
        raise ValueError(
            f"fisher_unit_root: {len(rows)} entities of {variable!r} are long enough for an ADF "
            f"test with {lags} lags; need at least 2"
        )
    if skipped:
        notes.append(f"{len(skipped)} entities too short for the ADF regression were skipped")
    p = np.array([r.p_value for r in rows])
    if np.any((p <= 0) | (p >= 1)):
        msg = f"{int(np.sum((p <= 0) | (p >= 1)))} per-entity p-values clipped to [1e-12, 1 - 1e-12]"
        _warn(msg)
        notes.append(msg)
    combined = fisher_combine(p, level)
    return UnitRootReport(variable, rows, combined, _decide(combined, policy), policy, level,
                          skipped, notes)
