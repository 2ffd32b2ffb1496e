"""Model specification and result containers shared by every estimator and test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import distributions as dist
from .distributions import DistributionRef

__all__ = ["ModelSpec", "EstimationResult", "TestResult", "make_test", "lag_name", "CONST"]

CONST = "_cons"
PERIOD_PREFIX = "_period_"


def lag_name(var: str, k: int) -> str:
    return f"L.{var}" if k == 1 else f"L{k}.{var}"


def _directives(items) -> tuple:
    if isinstance(items, str):
        items = (items,)
    out = []
    for d in items:
        if isinstance(d, str):
            from .instruments import parse_instrument_spec  # instruments imports this module

            out += parse_instrument_spec(d)
        else:
            out.append(d)
    return tuple(out)


@dataclass(frozen=True)
class ModelSpec:
    """What to regress on what.

    ``dep_lag_order`` lags of the dependent variable enter ahead of the
    regressors.  ``instrument_directives`` are only read by the GMM
    estimator (see :mod:`panelgmm.instruments`); strings are parsed with
    :func:`panelgmm.instruments.parse_instrument_spec`.
    """

    dependent: str
    regressors: tuple = ()
    dep_lag_order: int = 0
    include_intercept: bool = True
    instrument_directives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "instrument_directives", _directives(self.instrument_directives))
        if self.dependent in self.regressors:
            raise ValueError(f"dependent variable {self.dependent!r} listed among regressors")
        if self.dep_lag_order < 0:
            raise ValueError("dep_lag_order must be >= 0")
        if len(set(self.regressors)) != len(self.regressors):
            raise ValueError("duplicate regressor names")

    @property
    def lag_names(self) -> list:
        return [lag_name(self.dependent, k) for k in range(1, self.dep_lag_order + 1)]

    @property
    def variables(self) -> list:
        """Every panel series the specification touches."""
        names = [self.dependent, *self.regressors]
        for d in self.instrument_directives:
            if d.base_variable not in names:
                names.append(d.base_variable)
        return names

    def replace(self, **changes) -> "ModelSpec":
        kw = dict(dependent=self.dependent, regressors=self.regressors,
                  dep_lag_order=self.dep_lag_order, include_intercept=self.include_intercept,
                  instrument_directives=self.instrument_directives)
        kw.update(changes)
        return ModelSpec(**kw)


@dataclass
class TestResult:
    """A test statistic with its reference distribution and decision.

    ``tail`` fixes how ``p_value`` follows from ``statistic``: ``upper``
    (survival function), ``lower`` (cdf) or ``two-sided``.  Undefined tests
    carry ``defined=False``, ``NaN`` statistic and an explanation in
    ``note``.
    """

    name: str
    statistic: float
    distribution: DistributionRef
    p_value: float
    h0: str
    decision: str
    level: float = 0.05
    tail: str = "upper"
    defined: bool = True
    note: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.defined and self.p_value < self.level

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": None if not self.defined else self.statistic,
            "distribution": self.distribution.to_dict(),
            "p_value": None if not self.defined else self.p_value,
            "h0": self.h0,
            "decision": self.decision,
            "level": self.level,
            "tail": self.tail,
            "defined": self.defined,
            "note": self.note,
        }


def tail_p(distribution: DistributionRef, statistic: float, tail: str = "upper") -> float:
    if tail == "upper":
        return dist.sf(distribution, statistic)
    if tail == "lower":
        return dist.cdf(distribution, statistic)
    if tail == "two-sided":
        if distribution.family == "normal":
            return dist.two_sided_normal_p(statistic)
        return min(1.0, 2.0 * min(dist.cdf(distribution, statistic), dist.sf(distribution, statistic)))
    raise ValueError(f"unknown tail {tail!r}")


def make_test(name: str, statistic: float, distribution: DistributionRef, h0: str,
              reject: str, accept: str, level: float = 0.05, tail: str = "upper",
              note: str = "", **extra) -> TestResult:
    """Compute the p-value for ``statistic`` and attach the decision text."""
    statistic = float(statistic)
    p = tail_p(distribution, statistic, tail)
    decision = reject if p < level else accept
    return TestResult(name, statistic, distribution, p, h0, decision, level, tail, True, note, extra)


def undefined_test(name: str, distribution: DistributionRef, h0: str, note: str,
                   level: float = 0.05, tail: str = "upper") -> TestResult:
    return TestResult(name, math.nan, distribution, math.nan, h0, "undefined", level, tail,
                      False, note)


@dataclass
class EstimationResult:
    """Coefficients, covariance and fit statistics of one estimation.

    ``resid`` is aligned with ``entity_idx`` / ``period_idx`` (indices into
    the panel's entities and periods).  ``stat_distribution`` is the
    reference distribution of ``stats`` (t or z).
    """

    method: str
    names: list
    params: np.ndarray
    cov: np.ndarray
    stat_distribution: DistributionRef
    n_obs: int
    n_entities: int
    df_resid: float
    resid: np.ndarray
    fitted: np.ndarray
    entity_idx: np.ndarray
    period_idx: np.ndarray
    fit: dict = field(default_factory=dict)
    auxiliary: Any = None
    warnings: list = field(default_factory=list)
    spec: ModelSpec | None = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        var = np.clip(np.diag(self.cov), 0.0, None)
        self.std_errors = np.sqrt(var)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.stats = self.params / self.std_errors
        self.p_values = np.array([
            tail_p(self.stat_distribution, s, "two-sided") if np.isfinite(s) else math.nan
            for s in self.stats
        ])

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.names, self.params))

    @property
    def ssr(self) -> float:
        return float(self.resid @ self.resid)

    def coef(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def index(self, names) -> np.ndarray:
        return np.array([self.names.index(n) for n in names], dtype=int)

    def slope_names(self) -> list:
        """Coefficient names other than the intercept and period dummies."""
        return [n for n in self.names if n != CONST and not n.startswith(PERIOD_PREFIX)]
