"""
Static panel estimators: pooled OLS, fixed effects (within), random effects
(Swamy-Arora) and feasible GLS with groupwise heteroskedasticity and an
optional common AR(1), plus the pooled-versus-fixed-effects F-test.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from ._linalg import check_rank, lstsq, sym
from .panel import PanelDataset
from .results import (CONST, PERIOD_PREFIX, EstimationResult, ModelSpec, TestResult,
                      lag_name, make_test)

__all__ = [
    "Design",
    "build_design",
    "pooled_ols",
    "fixed_effects",
    "random_effects",
    "fgls",
    "f_test_pooled_vs_fe",
    "wald_slopes",
    "group_means",
    "demean",
    "EstimationWarning",
]

log = logging.getLogger(__name__)


class EstimationWarning(UserWarning):
    pass


@dataclass
class Design:
    """Complete-case rows of a specification, sorted by entity then period."""

    y: np.ndarray
    X: np.ndarray
    names: list
    entity: np.ndarray
    period: np.ndarray
    dropped_entities: list

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_entities(self) -> int:
        return int(np.unique(self.entity).size)


def build_design(panel: PanelDataset, spec: ModelSpec, intercept: bool | None = None,
                 min_obs_per_entity: int = 1) -> Design:
    """Stack the dependent variable and regressors over complete cases.

    Entities left with fewer than ``min_obs_per_entity`` rows are dropped
    with an :class:`EstimationWarning`.
    """
    panel.require([spec.dependent, *spec.regressors])
    intercept = spec.include_intercept if intercept is None else intercept
    cols = [panel.lag(spec.dependent, k) for k in range(1, spec.dep_lag_order + 1)]
    names = [lag_name(spec.dependent, k) for k in range(1, spec.dep_lag_order + 1)]
    cols += [panel[r] for r in spec.regressors]
    names += list(spec.regressors)
    y2 = panel[spec.dependent]
    ok = ~np.isnan(y2)
    for c in cols:
        ok &= ~np.isnan(c)
    counts = ok.sum(axis=1)
    dropped = [panel.entities[i] for i in np.flatnonzero((counts > 0) & (counts < min_obs_per_entity))]
    if dropped:
        warnings.warn(
            f"dropped {len(dropped)} entit{'y' if len(dropped) == 1 else 'ies'} with fewer than "
            f"{min_obs_per_entity} complete observations: {', '.join(dropped)}",
            EstimationWarning, stacklevel=3,
        )
        ok &= (counts >= min_obs_per_entity)[:, None]
    ii, tt = np.nonzero(ok)
    y = y2[ii, tt]
    X = np.column_stack([c[ii, tt] for c in cols]) if cols else np.empty((ii.size, 0))
    if intercept:
        X = np.column_stack([X, np.ones(ii.size)])
        names.append(CONST)
    return Design(y, X, names, ii, tt, dropped)


def group_means(values: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Per-row group mean of ``values`` (1-d or 2-d, rows = observations)."""
    _, inv, counts = np.unique(groups, return_inverse=True, return_counts=True)
    if values.ndim == 1:
        sums = np.bincount(inv, weights=values)
        return (sums / counts)[inv]
    out = np.empty_like(values, dtype=float)
    for j in range(values.shape[1]):
        sums = np.bincount(inv, weights=values[:, j])
        out[:, j] = (sums / counts)[inv]
    return out


def demean(values: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Within transformation: subtract each group's mean."""
    return values - group_means(values, groups)


def wald_slopes(params: np.ndarray, cov: np.ndarray, idx) -> tuple[float, int]:
    idx = np.asarray(idx, dtype=int)
    if idx.size == 0:
        return math.nan, 0
    b = params[idx]
    v = cov[np.ix_(idx, idx)]
    return float(b @ np.linalg.solve(v, b)), int(idx.size)


def _require_rows(d: Design, k: int, what: str) -> None:
    if d.n <= k:
        raise ValueError(f"{what}: {d.n} complete observations for {k} parameters")


def pooled_ols(panel: PanelDataset, spec: ModelSpec, min_obs_per_entity: int = 1) -> EstimationResult:
    """Pooled least squares with classical covariance ``s^2 (X'X)^-1``.

    ``fit`` carries ``r2``, ``ssr``, ``tss`` and the joint F-test of the
    slopes (``f_stat``, ``f_df``, ``f_p``).
    """
    d = build_design(panel, spec, min_obs_per_entity=min_obs_per_entity)
    n, k = d.X.shape
    _require_rows(d, k, "pooled_ols")
    fit = lstsq(d.X, d.y, d.names)
    df_resid = n - k
    s2 = fit.ssr / df_resid
    cov = sym(s2 * fit.xtx_inv)
    has_const = CONST in d.names
    tss = float(((d.y - d.y.mean()) ** 2).sum()) if has_const else float(d.y @ d.y)
    r2 = 1.0 - fit.ssr / tss if tss > 0 else math.nan
    k_slopes = k - int(has_const)
    f_stat = f_p = math.nan
    if k_slopes > 0 and tss > 0:
        f_stat = max(0.0, ((tss - fit.ssr) / k_slopes) / s2) if s2 > 0 else math.inf
        f_p = dist.sf(dist.f_dist(k_slopes, df_resid), f_stat) if s2 > 0 else 0.0
    return EstimationResult(
        method="pols", names=d.names, params=fit.params, cov=cov,
        stat_distribution=dist.student_t(df_resid), n_obs=n, n_entities=d.n_entities,
        df_resid=df_resid, resid=fit.resid, fitted=d.y - fit.resid,
        entity_idx=d.entity, period_idx=d.period,
        fit={"r2": r2, "ssr": fit.ssr, "tss": tss, "sigma2": s2,
             "f_stat": f_stat, "f_df": (k_slopes, df_resid), "f_p": f_p},
        spec=spec,
    )


def _period_dummies(d: Design, panel: PanelDataset):
    present = np.unique(d.period)
    cols, names = [], []
    for t in present[1:]:
        cols.append((d.period == t).astype(float))
        names.append(f"{PERIOD_PREFIX}{panel.periods[t]}")
    return cols, names


def fixed_effects(panel: PanelDataset, spec: ModelSpec, period_fixed: bool = False) -> EstimationResult:
    """Within (entity-demeaned) least squares.

    Residual degrees of freedom are ``n - N - k``.  With an intercept in the
    specification, the reported constant is the grand-mean intercept
    ``ybar - xbar'b``.  ``period_fixed`` adds period indicator columns whose
    coefficients are prefixed ``_period_``.  Entity intercepts are in
    ``auxiliary['entity_effects']``.

    Raises
    ------
    ValueError
        When no entity has two complete observations.
    """
    d = build_design(panel, spec, intercept=False, min_obs_per_entity=2)
    if d.n == 0:
        raise ValueError("fixed_effects: no entity has at least 2 complete observations")
    X, names = d.X, list(d.names)
    if period_fixed:
        cols, pnames = _period_dummies(d, panel)
        if cols:
            X = np.column_stack([X, *cols])
            names += pnames
    n, k = X.shape
    N = d.n_entities
    df_resid = n - N - k
    if df_resid <= 0:
        raise ValueError(f"fixed_effects: n - N - k = {df_resid} residual degrees of freedom")
    xw = demean(X, d.entity)
    yw = demean(d.y, d.entity)
    check_rank(xw, names)
    fit = lstsq(xw, yw, names, check=False)
    s2 = fit.ssr / df_resid
    beta = fit.params
    x_bar_i = X - xw
    y_bar_i = d.y - yw
    alpha_row = y_bar_i - x_bar_i @ beta
    entity_effects = {panel.entities[i]: float(alpha_row[d.entity == i][0]) for i in np.unique(d.entity)}
    if spec.include_intercept:
        grand_x = X.mean(axis=0)
        grand_y = d.y.mean()
        W = np.column_stack([xw + grand_x, np.ones(n)])
        fit_c = lstsq(W, yw + grand_y, names + [CONST], check=False)
        params = fit_c.params
        cov = sym(s2 * fit_c.xtx_inv)
        out_names = names + [CONST]
    else:
        params = beta
        cov = sym(s2 * fit.xtx_inv)
        out_names = names
    tss_w = float(yw @ yw)
    r2 = 1.0 - fit.ssr / tss_w if tss_w > 0 else math.nan
    f_stat = max(0.0, ((tss_w - fit.ssr) / k) / s2) if s2 > 0 else math.inf
    f_p = dist.sf(dist.f_dist(k, df_resid), f_stat) if s2 > 0 else 0.0
    return EstimationResult(
        method="fe", names=out_names, params=params, cov=cov,
        stat_distribution=dist.student_t(df_resid), n_obs=n, n_entities=N,
        df_resid=df_resid, resid=fit.resid, fitted=d.y - fit.resid,
        entity_idx=d.entity, period_idx=d.period,
        fit={"r2_within": r2, "ssr": fit.ssr, "sigma2": s2, "f_stat": f_stat,
             "f_df": (k, df_resid), "f_p": f_p},
        auxiliary={"entity_effects": entity_effects, "period_fixed": period_fixed,
                   "dropped_entities": d.dropped_entities},
        spec=spec,
    )


def random_effects(panel: PanelDataset, spec: ModelSpec, sigma2_u: float | None = None,
                   sigma2_e: float | None = None) -> EstimationResult:
    """Random-effects GLS with Swamy-Arora variance components.

    ``sigma2_e`` comes from the within regression and ``sigma2_u`` from the
    between regression (``SSR_b / (N - k - 1) - sigma2_e / Tbar`` with
    ``Tbar`` the harmonic mean of the entity counts), floored at zero.
    Either component may be injected instead.  Each entity is
    quasi-demeaned with ``theta_i = 1 - sqrt(s2_e / (T_i s2_u + s2_e))``.
    """
    d = build_design(panel, spec, intercept=True, min_obs_per_entity=2)
    if d.n == 0:
        raise ValueError("random_effects: no entity has at least 2 complete observations")
    n, kc = d.X.shape
    slope_idx = [j for j, nm in enumerate(d.names) if nm != CONST]
    k = len(slope_idx)
    N = d.n_entities
    notes = []
    xs = d.X[:, slope_idx]
    if sigma2_e is None:
        df_w = n - N - k
        if df_w <= 0:
            raise ValueError("random_effects: not enough observations for the within regression")
        xw = demean(xs, d.entity)
        yw = demean(d.y, d.entity)
        check_rank(xw, [d.names[j] for j in slope_idx])
        sigma2_e = lstsq(xw, yw, check=False).ssr / df_w
    groups, inv, t_i = np.unique(d.entity, return_inverse=True, return_counts=True)
    if sigma2_u is None:
        if N > kc:
            yb = np.bincount(inv, weights=d.y) / t_i
            Xb = np.column_stack([np.bincount(inv, weights=d.X[:, j]) / t_i for j in range(kc)])
            fb = lstsq(Xb, yb, d.names, check=False)
            t_bar = N / np.sum(1.0 / t_i)
            sigma2_u = fb.ssr / (N - kc) - sigma2_e / t_bar
        else:
            notes.append(f"between regression needs N > {kc}; sigma2_u set to 0")
            sigma2_u = 0.0
        if sigma2_u < 0:
            notes.append(f"estimated sigma2_u = {sigma2_u:.6g} < 0 floored to 0 (RE equals pooled OLS)")
            sigma2_u = 0.0
    if sigma2_e <= 0:
        raise ValueError("random_effects: idiosyncratic variance is not positive")
    theta_g = 1.0 - np.sqrt(sigma2_e / (t_i * sigma2_u + sigma2_e))
    theta = theta_g[inv]
    ys = d.y - theta * group_means(d.y, d.entity)
    Xs = d.X - theta[:, None] * group_means(d.X, d.entity)
    fit = lstsq(Xs, ys, d.names)
    cov = sym(sigma2_e * fit.xtx_inv)
    wald, wdf = wald_slopes(fit.params, cov, slope_idx)
    resid = d.y - d.X @ fit.params
    for note in notes:
        log.info("random_effects: %s", note)
    return EstimationResult(
        method="re", names=d.names, params=fit.params, cov=cov,
        stat_distribution=dist.normal(), n_obs=n, n_entities=N, df_resid=n - kc,
        resid=resid, fitted=d.y - resid, entity_idx=d.entity, period_idx=d.period,
        fit={"wald": wald, "wald_df": wdf,
             "wald_p": dist.sf(dist.chi_square(wdf), wald) if wdf else math.nan,
             "ssr_gls": fit.ssr},
        auxiliary={"sigma2_u": float(sigma2_u), "sigma2_e": float(sigma2_e),
                   "rho": float(sigma2_u / (sigma2_u + sigma2_e)),
                   "theta": {panel.entities[g]: float(th) for g, th in zip(groups, theta_g)},
                   "notes": notes},
        warnings=notes, spec=spec,
    )


def _gls_transform(Z: np.ndarray, entity: np.ndarray, period: np.ndarray, sd: np.ndarray,
                   rho: float) -> np.ndarray:
    """Apply Omega^{-1/2} for block-diagonal sigma_i^2 R(rho) covariance.

    Rows must be sorted by entity then period.  A gap in an entity's periods
    starts a new AR(1) run.
    """
    Z = np.asarray(Z, dtype=float)
    one_d = Z.ndim == 1
    if one_d:
        Z = Z[:, None]
    out = Z.copy()
    if rho != 0.0:
        scale = math.sqrt(1.0 - rho * rho)
        cont = np.zeros(Z.shape[0], dtype=bool)
        cont[1:] = (entity[1:] == entity[:-1]) & (period[1:] == period[:-1] + 1)
        out[cont] = Z[cont] - rho * Z[np.flatnonzero(cont) - 1]
        out[~cont] = scale * Z[~cont]
        out /= scale
    out /= sd[:, None]
    return out[:, 0] if one_d else out


def fgls(panel: PanelDataset, spec: ModelSpec, error_model: str = "groupwise_het",
         sigma2=None, rho: float | None = None, max_iter: int = 50,
         tol: float = 1e-8) -> EstimationResult:
    """Iterated feasible GLS.

    Starting from pooled OLS residuals, estimate a variance per entity (and,
    for ``groupwise_het_ar1``, a common AR(1) coefficient from the pooled
    residual autoregression), re-fit by GLS, and repeat until the relative
    change in coefficients falls below ``tol``.  ``sigma2`` (mapping entity
    -> variance, or an array in entity order) and ``rho`` may be injected,
    in which case a single GLS step is taken with them held fixed.
    """
    if error_model not in ("groupwise_het", "groupwise_het_ar1"):
        raise ValueError(f"unknown error_model {error_model!r}")
    ar1 = error_model == "groupwise_het_ar1"
    d = build_design(panel, spec, min_obs_per_entity=3 if ar1 else 1)
    n, kc = d.X.shape
    _require_rows(d, kc, "fgls")
    check_rank(d.X, d.names)
    groups, inv, t_i = np.unique(d.entity, return_inverse=True, return_counts=True)
    warn_list = []

    fixed_sigma = sigma2 is not None
    if fixed_sigma:
        if isinstance(sigma2, dict):
            s2_g = np.array([float(sigma2[panel.entities[g]]) for g in groups])
        else:
            s2_g = np.asarray(sigma2, dtype=float)[groups]
    fixed_rho = rho is not None or not ar1
    rho_hat = float(rho) if rho is not None else 0.0

    beta = lstsq(d.X, d.y, check=False).params
    converged = False
    iterations = 0
    fit = None
    for iterations in range(1, max_iter + 1):
        e = d.y - d.X @ beta
        if not fixed_rho:
            cont = np.zeros(n, dtype=bool)
            cont[1:] = (d.entity[1:] == d.entity[:-1]) & (d.period[1:] == d.period[:-1] + 1)
            idx = np.flatnonzero(cont)
            den = float(e[idx - 1] @ e[idx - 1])
            rho_hat = float(e[idx] @ e[idx - 1]) / den if den > 0 else 0.0
            if abs(rho_hat) >= 1.0:
                msg = f"AR(1) coefficient {rho_hat:.4f} clamped to {math.copysign(0.99, rho_hat)}"
                warnings.warn(msg, EstimationWarning, stacklevel=2)
                warn_list.append(msg)
                rho_hat = math.copysign(0.99, rho_hat)
        if not fixed_sigma:
            s2_g = np.bincount(inv, weights=e * e) / t_i
            floor = 1e-12 * max(float(s2_g.mean()), 1e-300)
            if np.any(s2_g <= floor):
                s2_g = np.maximum(s2_g, floor)
        sd = np.sqrt(s2_g)[inv]
        Xs = _gls_transform(d.X, d.entity, d.period, sd, rho_hat)
        ys = _gls_transform(d.y, d.entity, d.period, sd, rho_hat)
        fit = lstsq(Xs, ys, d.names, check=False)
        change = np.max(np.abs(fit.params - beta)) / max(np.max(np.abs(beta)), 1e-12)
        beta = fit.params
        if fixed_sigma and fixed_rho:
            converged = True
            break
        if change < tol:
            converged = True
            break
    if not converged:
        msg = f"FGLS did not converge in {max_iter} iterations"
        warnings.warn(msg, EstimationWarning, stacklevel=2)
        warn_list.append(msg)
    cov = sym(fit.xtx_inv)
    slope_idx = [j for j, nm in enumerate(d.names) if nm != CONST]
    wald, wdf = wald_slopes(beta, cov, slope_idx)
    resid = d.y - d.X @ beta
    return EstimationResult(
        method="fgls", names=d.names, params=beta, cov=cov,
        stat_distribution=dist.normal(), n_obs=n, n_entities=d.n_entities, df_resid=n - kc,
        resid=resid, fitted=d.y - resid, entity_idx=d.entity, period_idx=d.period,
        fit={"wald": wald, "wald_df": wdf,
             "wald_p": dist.sf(dist.chi_square(wdf), wald) if wdf else math.nan},
        auxiliary={"error_model": error_model, "converged": converged, "iterations": iterations,
                   "sigma2": {panel.entities[g]: float(s) for g, s in zip(groups, s2_g)},
                   "rho": rho_hat},
        warnings=warn_list, spec=spec,
    )


def _same_sample(a: EstimationResult, b: EstimationResult) -> bool:
    return (a.n_obs == b.n_obs and np.array_equal(a.entity_idx, b.entity_idx)
            and np.array_equal(a.period_idx, b.period_idx))


def f_test_pooled_vs_fe(pols: EstimationResult, fe: EstimationResult, level: float = 0.01) -> TestResult:
    """F-test that all entity intercepts are equal (pooled OLS against FE)."""
    if not _same_sample(pols, fe):
        raise ValueError("f_test_pooled_vs_fe: pooled and FE fits use different samples")
    df_num = pols.df_resid - fe.df_resid
    df_den = fe.df_resid
    ssr_p, ssr_f = pols.ssr, fe.ssr
    f = ((ssr_p - ssr_f) / df_num) / (ssr_f / df_den) if ssr_f > 0 else math.inf
    f = max(0.0, f)
    return make_test(
        "F-test pooled OLS vs FE", f, dist.f_dist(df_num, df_den),
        h0="no entity heterogeneity (all entity intercepts equal)",
        reject="Fixed Effect", accept="Pooled OLS", level=level,
    )
