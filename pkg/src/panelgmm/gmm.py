"""
One-step Arellano-Bond difference GMM with Sargan, AR(m) and
difference-in-Sargan tests.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from ._linalg import sym
from .instruments import InstrumentPlan, build_instrument_matrix, select_directives
from .panel import PanelDataset
from .results import EstimationResult, ModelSpec, TestResult, make_test, undefined_test

__all__ = [
    "GmmResult",
    "GmmSingularError",
    "GmmFit",
    "fit_one_step",
    "h_matrix",
    "estimate_one_step",
    "sargan_test",
    "ar_test",
    "difference_in_sargan",
]

SARGAN_H0 = "overidentifying restrictions are valid (instruments exogenous)"
_SINGULAR_TOL = 1e-13


class GmmSingularError(np.linalg.LinAlgError):
    pass


def h_matrix(periods) -> np.ndarray:
    """First-difference weighting block: 2 on the diagonal, -1 between adjacent periods."""
    p = np.asarray(periods)
    H = 2.0 * np.eye(p.size)
    adj = np.abs(p[:, None] - p[None, :]) == 1
    H[adj] = -1.0
    return H


@dataclass
class GmmFit:
    """Arrays of a one-step fit, enough to recompute every test."""

    params: np.ndarray
    resid: np.ndarray
    A: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    ZX: np.ndarray
    g: np.ndarray
    sigma2: float
    cov_nonrobust: np.ndarray
    cov_robust: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    entity: np.ndarray
    period: np.ndarray
    starts: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def n_instruments(self) -> int:
        return self.Z.shape[1]


def _check_invertible(a: np.ndarray, what: str, hint: str) -> np.ndarray:
    w = np.linalg.eigvalsh(sym(a))
    top = max(abs(w).max(), 1e-300)
    if w.min() <= _SINGULAR_TOL * top:
        raise GmmSingularError(
            f"{what} is singular (smallest/largest eigenvalue {w.min() / top:.3g}); {hint}"
        )
    return np.linalg.inv(a)


def fit_one_step(y, X, Z, entity, period) -> GmmFit:
    """One-step difference GMM on stacked arrays.

    Rows must be sorted by entity then period.  The weight matrix is
    ``A = (sum_i Z_i' H_i Z_i)^{-1}`` with ``H_i`` from :func:`h_matrix`.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    entity = np.asarray(entity)
    period = np.asarray(period)
    n, k = X.shape
    adj = np.flatnonzero((entity[1:] == entity[:-1]) & (period[1:] == period[:-1] + 1)) + 1
    cross = Z[adj].T @ Z[adj - 1]
    zhz = 2.0 * (Z.T @ Z) - cross - cross.T
    A = _check_invertible(
        zhz, "instrument weighting matrix sum_i Z_i'H_iZ_i",
        "drop redundant instruments, collapse GMM-style blocks or reduce max_gmm_lag_depth",
    )
    A = sym(A)
    ZX = Z.T @ X
    Zy = Z.T @ y
    M = ZX.T @ A @ ZX
    M_inv = _check_invertible(
        M, "X'Z A Z'X", "check that every regressor is correlated with some instrument",
    )
    M_inv = sym(M_inv)
    params = M_inv @ (ZX.T @ A @ Zy)
    resid = y - X @ params
    if n <= k:
        raise ValueError(f"difference GMM: {n} observations for {k} parameters")
    sigma2 = float(resid @ resid) / (2.0 * (n - k))
    starts = np.flatnonzero(np.r_[True, entity[1:] != entity[:-1]])
    g = np.add.reduceat(Z * resid[:, None], starts, axis=0)
    S = g.T @ g
    B = M_inv @ ZX.T @ A
    cov_robust = sym(B @ S @ B.T)
    return GmmFit(params, resid, A, M, M_inv, ZX, g, sigma2, sym(sigma2 * M_inv), cov_robust,
                  X, Z, entity, period, starts)


@dataclass
class GmmResult:
    instrument_count: int
    group_count: int
    sargan: TestResult
    ar_tests: list
    robust: bool
    plan: InstrumentPlan
    fit: GmmFit = field(repr=False)
    weighting: str = "one_step_h"


def _sargan(fit: GmmFit, level: float = 0.05) -> TestResult:
    df = fit.n_instruments - fit.k
    if df < 1:
        return undefined_test(
            "Sargan test of overidentifying restrictions", dist.chi_square(max(df, 0)), SARGAN_H0,
            note=f"exactly identified ({fit.n_instruments} instruments, {fit.k} parameters); "
                 "no overidentifying restrictions to test", level=level)
    ze = fit.Z.T @ fit.resid
    s = float(ze @ fit.A @ ze) / fit.sigma2
    return make_test("Sargan test of overidentifying restrictions", s, dist.chi_square(df),
                     h0=SARGAN_H0, reject="instruments invalid", accept="instruments valid",
                     level=level)


def _ar(fit: GmmFit, order: int, level: float = 0.05) -> TestResult:
    name = f"Arellano-Bond test for AR({order})"
    h0 = f"no autocorrelation of order {order} in differenced residuals"
    row_of = {(int(e), int(t)): r for r, (e, t) in enumerate(zip(fit.entity, fit.period))}
    w = np.zeros(fit.n)
    for r, (e, t) in enumerate(zip(fit.entity, fit.period)):
        s = row_of.get((int(e), int(t) - order))
        if s is not None:
            w[r] = fit.resid[s]
    if not np.any(w):
        return undefined_test(name, dist.normal(), h0,
                              note=f"no residual pairs {order} periods apart", level=level,
                              tail="two-sided")
    e = fit.resid
    a = np.add.reduceat(w * e, fit.starts)
    numerator = float(a.sum())
    xw = fit.X.T @ w
    # residual autocovariance, projection correction and coefficient-covariance terms
    term1 = float(a @ a)
    term2 = -2.0 * float(xw @ fit.M_inv @ fit.ZX.T @ fit.A @ (fit.g.T @ a))
    term3 = float(xw @ fit.cov_robust @ xw)
    var = term1 + term2 + term3
    if not var > 0:
        return undefined_test(name, dist.normal(), h0, note="non-positive variance estimate",
                              level=level, tail="two-sided")
    z = numerator / math.sqrt(var)
    return make_test(name, z, dist.normal(), h0=h0, reject="autocorrelation",
                     accept="no autocorrelation", level=level, tail="two-sided")


def estimate_one_step(panel: PanelDataset, spec: ModelSpec, plan: InstrumentPlan | None = None,
                      robust: bool = False, max_gmm_lag_depth="auto", collapse: bool = False,
                      level: float = 0.05) -> EstimationResult:
    """Arellano-Bond one-step difference GMM.

    ``beta = (X'Z A Z'X)^{-1} X'Z A Z'y``.  The non-robust covariance is
    ``s2 (X'Z A Z'X)^{-1}`` with ``s2 = e'e / (2 (n - k))``; the robust one
    is the sandwich built from per-entity moment contributions.
    Coefficients are tested against the standard normal.  The Sargan test
    and AR(1)/AR(2) tests are attached to ``auxiliary`` (a
    :class:`GmmResult`).
    """
    if plan is None:
        plan = build_instrument_matrix(panel, spec, max_gmm_lag_depth=max_gmm_lag_depth,
                                       collapse=collapse)
    fit = fit_one_step(plan.y, plan.X, plan.Z, plan.entity_idx, plan.period_idx)
    cov = fit.cov_robust if robust else fit.cov_nonrobust
    wald = float(fit.params @ np.linalg.solve(cov, fit.params))
    ar_tests = [_ar(fit, m, level) for m in (1, 2)]
    aux = GmmResult(plan.realized_column_count, plan.group_count, _sargan(fit, level), ar_tests,
                    robust, plan, fit)
    return EstimationResult(
        method="diff_gmm", names=list(plan.names), params=fit.params, cov=cov,
        stat_distribution=dist.normal(), n_obs=fit.n, n_entities=plan.group_count,
        df_resid=fit.n - fit.k, resid=fit.resid, fitted=plan.y - fit.resid,
        entity_idx=plan.entity_idx, period_idx=plan.period_idx,
        fit={"wald": wald, "wald_df": fit.k,
             "wald_p": dist.sf(dist.chi_square(fit.k), wald), "sigma2": fit.sigma2},
        auxiliary=aux, warnings=list(plan.warnings), spec=spec,
    )


def _gmm_aux(result) -> GmmResult:
    aux = result.auxiliary if isinstance(result, EstimationResult) else result
    if not isinstance(aux, GmmResult):
        raise TypeError("expected a difference-GMM result")
    return aux


def sargan_test(result, level: float = 0.05) -> TestResult:
    """Sargan statistic ``(e'Z) A (Z'e) / s2`` against chi2(L - k)."""
    return _sargan(_gmm_aux(result).fit, level)


def ar_test(result, order: int, level: float = 0.05) -> TestResult:
    """Arellano-Bond test for serial correlation of the given order in differenced residuals."""
    if order < 1:
        raise ValueError("order must be >= 1")
    return _ar(_gmm_aux(result).fit, order, level)


def difference_in_sargan(panel: PanelDataset, result: EstimationResult, subset,
                         level: float = 0.05) -> tuple[TestResult, TestResult]:
    """Sargan test without an instrument subset, and the difference statistic.

    The model is re-estimated on the same rows with the selected directives
    removed; ``D = S_full - S_excl`` is referred to chi2(df_full - df_excl).

    Raises
    ------
    InstrumentError
        If removing the subset leaves the model under-identified.
    """
    aux = _gmm_aux(result)
    plan = aux.plan
    spec = result.spec
    idx = select_directives(plan.directives, subset)
    full = aux.sargan
    df_full = aux.instrument_count - len(plan.names)
    if not idx:
        excl = full
        df_excl = df_full
    else:
        sub = build_instrument_matrix(
            panel, spec, max_gmm_lag_depth=plan.max_gmm_lag_depth, collapse=plan.collapse,
            directives=[d for d in plan.directives], exclude=idx,
            rows=(plan.entity_idx, plan.period_idx),
        )
        fit = fit_one_step(sub.y, sub.X, sub.Z, sub.entity_idx, sub.period_idx)
        df_excl = fit.n_instruments - fit.k
        if df_excl == 0:
            excl = make_test("Sargan test excluding group", 0.0, dist.chi_square(0), h0=SARGAN_H0,
                             reject="instruments invalid", accept="instruments valid", level=level,
                             note="exactly identified without the subset")
        else:
            excl = _sargan(fit, level)
    excl = dataclasses.replace(excl, name="Sargan test excluding group")
    if not full.defined:
        raise ValueError("difference-in-Sargan needs an overidentified full model")
    diff_df = df_full - df_excl
    d_stat = full.statistic - excl.statistic
    diff = make_test("Difference-in-Sargan", d_stat, dist.chi_square(diff_df),
                     h0="instrument subset is exogenous", reject="subset endogenous",
                     accept="subset exogenous", level=level)
    return excl, diff
