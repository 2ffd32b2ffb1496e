"""
Panel data container, bank-ratio construction and screening statistics.

A :class:`PanelDataset` stores every series as a dense ``(entity, period)``
array with ``NaN`` marking missing cells.  Periods always form a contiguous
integer range so that lags are plain shifts along the time axis.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._linalg import lstsq

__all__ = [
    "RawBankRecord",
    "MacroRecord",
    "PanelDataset",
    "DescriptiveRow",
    "CorrelationResult",
    "VifRow",
    "VifReport",
    "RegulatoryFlag",
    "PanelWarning",
    "compute_ratios",
    "describe",
    "correlation_matrix",
    "vif",
    "regulatory_flags",
    "RATIO_SERIES",
    "CORRELATION_THRESHOLD",
    "VIF_THRESHOLD",
]

RATIO_SERIES = ("ROA", "ROE", "NIM", "NPLR", "LLPR", "CAR", "SIZE", "GDP", "INF")
CORRELATION_THRESHOLD = 0.80
VIF_THRESHOLD = 10.0
NPLR_LIMIT = 3.0
CAR_FLOOR = 9.0


class PanelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RawBankRecord:
    entity_id: str
    period: int
    net_profit_after_tax: float
    total_assets: float
    total_equity: float
    net_interest_income: float
    earning_assets: float
    non_performing_loans: float
    gross_loans: float
    credit_loss_provision: float
    tier1_capital: float
    tier2_capital: float
    risk_weighted_assets: float


@dataclass(frozen=True)
class MacroRecord:
    period: int
    gdp_growth: float
    inflation: float


class PanelDataset:
    """Immutable entity-by-period table of named real series.

    Parameters
    ----------
    entities : sequence of str
        Entity identifiers, in panel order.
    periods : sequence of int
        Contiguous, increasing integer periods.
    series : mapping of str to array_like
        Each value has shape ``(len(entities), len(periods))``; ``NaN`` marks
        a missing cell.
    diagnostics : sequence of str, optional
        Messages produced while the panel was built (rejected records etc.).
    """

    def __init__(self, entities, periods, series: Mapping[str, np.ndarray], diagnostics=()):
        entities = tuple(str(e) for e in entities)
        periods = tuple(int(p) for p in periods)
        if len(set(entities)) != len(entities):
            raise ValueError("entity identifiers must be unique")
        if periods and list(periods) != list(range(periods[0], periods[0] + len(periods))):
            raise ValueError("periods must be a contiguous increasing integer range")
        shape = (len(entities), len(periods))
        data = {}
        for name, values in series.items():
            arr = np.array(values, dtype=float)
            if arr.shape != shape:
                raise ValueError(f"series {name!r} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            data[str(name)] = arr
        self._entities = entities
        self._periods = periods
        self._series = data
        self.diagnostics = tuple(diagnostics)

    # -- construction ---------------------------------------------------

    @classmethod
    def from_long(cls, entity_ids: Sequence, periods: Sequence, columns: Mapping[str, Sequence],
                  diagnostics=()) -> "PanelDataset":
        """Build from long-format rows; duplicate ``(entity, period)`` pairs are rejected."""
        entity_ids = [str(e) for e in entity_ids]
        periods = [int(p) for p in periods]
        order = list(dict.fromkeys(entity_ids))
        if not periods:
            return cls(order, [], {k: np.empty((len(order), 0)) for k in columns}, diagnostics)
        p0, p1 = min(periods), max(periods)
        prange = list(range(p0, p1 + 1))
        e_index = {e: i for i, e in enumerate(order)}
        seen = {}
        for row, key in enumerate(zip(entity_ids, periods)):
            if key in seen:
                raise ValueError(
                    f"duplicate (entity, period) {key} at rows {seen[key]} and {row}"
                )
            seen[key] = row
        ii = np.array([e_index[e] for e in entity_ids], dtype=int)
        tt = np.array(periods, dtype=int) - p0
        data = {}
        for name, col in columns.items():
            arr = np.full((len(order), len(prange)), np.nan)
            arr[ii, tt] = np.asarray(col, dtype=float)
            data[name] = arr
        return cls(order, prange, data, diagnostics)

    def with_series(self, **series) -> "PanelDataset":
        data = dict(self._series)
        data.update(series)
        return PanelDataset(self._entities, self._periods, data, self.diagnostics)

    def select_entities(self, index) -> "PanelDataset":
        index = np.asarray(index, dtype=int)
        data = {k: v[index] for k, v in self._series.items()}
        return PanelDataset([self._entities[i] for i in index], self._periods, data,
                            self.diagnostics)

    # -- access ---------------------------------------------------------

    @property
    def entities(self) -> tuple:
        return self._entities

    @property
    def periods(self) -> tuple:
        return self._periods

    @property
    def series_names(self) -> tuple:
        return tuple(self._series)

    @property
    def n_entities(self) -> int:
        return len(self._entities)

    @property
    def n_periods(self) -> int:
        return len(self._periods)

    @property
    def shape(self) -> tuple:
        return (len(self._entities), len(self._periods))

    def __contains__(self, name) -> bool:
        return name in self._series

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._series[name]
        except KeyError:
            raise KeyError(
                f"unknown series {name!r}; available: {', '.join(self._series) or '(none)'}"
            ) from None

    def require(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self._series]
        if missing:
            raise KeyError(
                f"unknown series {', '.join(map(repr, missing))}; "
                f"available: {', '.join(self._series) or '(none)'}"
            )

    def missing_mask(self, name: str) -> np.ndarray:
        return np.isnan(self[name])

    def lag(self, name: str, k: int = 1) -> np.ndarray:
        """Series shifted ``k`` periods back; the first ``k`` periods become missing."""
        return shift(self[name], k)

    def to_long(self, names: Sequence[str] | None = None, skip_empty: bool = True):
        """Long rows ``(entity, period, values...)``; fully-missing rows skipped."""
        names = list(self._series) if names is None else list(names)
        rows = []
        for i, e in enumerate(self._entities):
            for t, p in enumerate(self._periods):
                vals = [self._series[n][i, t] for n in names]
                if skip_empty and all(math.isnan(v) for v in vals):
                    continue
                rows.append((e, p, *vals))
        return names, rows

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if (self._entities, self._periods) != (other._entities, other._periods):
            return False
        if set(self._series) != set(other._series):
            return False
        return all(
            np.array_equal(self._series[k], other._series[k], equal_nan=True) for k in self._series
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"PanelDataset(N={self.n_entities}, periods={self._periods[:1]}..{self._periods[-1:]}, "
            f"series={list(self._series)})"
        )


def shift(arr: np.ndarray, k: int) -> np.ndarray:
    """Shift a ``(N, T)`` array ``k`` periods along time (positive = lag)."""
    out = np.full(arr.shape, np.nan)
    if k == 0:
        out[:] = arr
    elif k > 0:
        if k < arr.shape[1]:
            out[:, k:] = arr[:, :-k]
    else:
        if -k < arr.shape[1]:
            out[:, :k] = arr[:, -k:]
    return out


# ---------------------------------------------------------------------------
# ratio construction

_POSITIVE_FIELDS = ("total_assets", "risk_weighted_assets", "earning_assets", "gross_loans")


def compute_ratios(records: Iterable[RawBankRecord], macro: Iterable[MacroRecord]) -> PanelDataset:
    """Build the bank-ratio panel from raw balance-sheet records.

    ROA and ROE divide by the average of this and last year's assets or
    equity, so each entity's first observed year has them missing.  Records
    with a non-positive total assets, risk-weighted assets, earning assets
    or gross loans are rejected: every series is missing for that cell and a
    diagnostic naming the entity, period and field is kept on the panel.

    Raises
    ------
    ValueError
        Duplicate ``(entity, period)`` records or a period with no macro
        record.
    """
    records = list(records)
    macro_by_period = {}
    for m in macro:
        if m.period in macro_by_period:
            raise ValueError(f"duplicate macro record for period {m.period}")
        macro_by_period[int(m.period)] = m
    if not records:
        raise ValueError("no bank records supplied")

    entities = list(dict.fromkeys(r.entity_id for r in sorted(records, key=lambda r: (r.entity_id, r.period))))
    p0 = min(r.period for r in records)
    p1 = max(r.period for r in records)
    periods = list(range(p0, p1 + 1))
    missing_macro = sorted({r.period for r in records} - set(macro_by_period))
    if missing_macro:
        raise ValueError(f"no macro record for period(s) {missing_macro}")

    e_index = {e: i for i, e in enumerate(entities)}
    by_cell = {}
    diagnostics = []
    for r in records:
        key = (r.entity_id, int(r.period))
        if key in by_cell:
            raise ValueError(f"duplicate bank record for entity {r.entity_id!r}, period {r.period}")
        bad = [f for f in _POSITIVE_FIELDS if not getattr(r, f) > 0]
        if bad:
            for f in bad:
                diagnostics.append(
                    f"rejected record entity={r.entity_id} period={r.period}: "
                    f"{f} must be positive (got {getattr(r, f)!r})"
                )
            by_cell[key] = None
            continue
        by_cell[key] = r

    shape = (len(entities), len(periods))
    out = {name: np.full(shape, np.nan) for name in RATIO_SERIES}
    for (e, p), r in by_cell.items():
        if r is None:
            continue
        i, t = e_index[e], p - p0
        prev = by_cell.get((e, p - 1))
        if prev is not None:
            avg_assets = (prev.total_assets + r.total_assets) / 2.0
            out["ROA"][i, t] = r.net_profit_after_tax / avg_assets * 100.0
            avg_equity = (prev.total_equity + r.total_equity) / 2.0
            if avg_equity != 0:
                out["ROE"][i, t] = r.net_profit_after_tax / avg_equity * 100.0
        out["NIM"][i, t] = r.net_interest_income / r.earning_assets * 100.0
        out["NPLR"][i, t] = r.non_performing_loans / r.gross_loans * 100.0
        out["LLPR"][i, t] = r.credit_loss_provision / r.gross_loans * 100.0
        out["CAR"][i, t] = (r.tier1_capital + r.tier2_capital) / r.risk_weighted_assets * 100.0
        out["SIZE"][i, t] = math.log(r.total_assets)
        m = macro_by_period[p]
        out["GDP"][i, t] = m.gdp_growth
        out["INF"][i, t] = m.inflation

    for msg in diagnostics:
        warnings.warn(msg, PanelWarning, stacklevel=2)
    return PanelDataset(entities, periods, out, diagnostics)


@dataclass(frozen=True)
class RegulatoryFlag:
    entity: str
    period: int
    series: str
    value: float
    message: str


def regulatory_flags(panel: PanelDataset, nplr: str = "NPLR", car: str = "CAR") -> list:
    """Cells breaching the 3% non-performing-loan ceiling or the 9% capital floor."""
    flags = []
    checks = []
    if nplr in panel:
        checks.append((nplr, lambda v: v > NPLR_LIMIT,
                       f"non-performing loan ratio above the {NPLR_LIMIT:g}% regulatory ceiling"))
    if car in panel:
        checks.append((car, lambda v: v < CAR_FLOOR,
                       f"capital adequacy ratio below the {CAR_FLOOR:g}% regulatory minimum"))
    for name, breach, msg in checks:
        arr = panel[name]
        for i, e in enumerate(panel.entities):
            for t, p in enumerate(panel.periods):
                v = arr[i, t]
                if not math.isnan(v) and breach(v):
                    flags.append(RegulatoryFlag(e, p, name, float(v), msg))
    return flags


# ---------------------------------------------------------------------------
# screening statistics


@dataclass(frozen=True)
class DescriptiveRow:
    variable: str
    mean: float
    std_dev: float
    min: float
    max: float
    n_obs: int


def describe(panel: PanelDataset, variables: Sequence[str]) -> list:
    """Mean, sample standard deviation, min, max and count per variable.

    Missing cells are dropped variable by variable.
    """
    panel.require(variables)
    rows = []
    for name in variables:
        x = panel[name].ravel()
        x = np.sort(x[~np.isnan(x)])
        n = x.size
        if n == 0:
            rows.append(DescriptiveRow(name, math.nan, math.nan, math.nan, math.nan, 0))
            continue
        lo, hi = float(x[0]), float(x[-1])
        if lo == hi:
            rows.append(DescriptiveRow(name, lo, 0.0 if n > 1 else math.nan, lo, hi, n))
            continue
        mean = math.fsum(x) / n
        mean = min(max(mean, lo), hi)
        sd = math.sqrt(math.fsum((x - mean) ** 2) / (n - 1)) if n > 1 else math.nan
        rows.append(DescriptiveRow(name, mean, sd, lo, hi, n))
    return rows


@dataclass
class CorrelationResult:
    variables: list
    matrix: np.ndarray
    n_pairs: np.ndarray
    high_pairs: list = field(default_factory=list)
    undefined_pairs: list = field(default_factory=list)
    threshold: float = CORRELATION_THRESHOLD


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        return math.nan
    r = float(da @ db) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def correlation_matrix(panel: PanelDataset, variables: Sequence[str],
                       threshold: float = CORRELATION_THRESHOLD) -> CorrelationResult:
    """Pairwise-complete Pearson correlations.

    Pairs with ``|r|`` above ``threshold`` are listed in ``high_pairs``.  A
    zero-variance variable yields ``NaN`` cells that are listed in
    ``undefined_pairs``; no other cell is affected.
    """
    variables = list(variables)
    if len(variables) < 2:
        raise ValueError("correlation_matrix needs at least two variables")
    panel.require(variables)
    k = len(variables)
    cols = [panel[v].ravel() for v in variables]
    mat = np.eye(k)
    counts = np.zeros((k, k), dtype=int)
    high, undefined = [], []
    for a in range(k):
        ok = ~np.isnan(cols[a])
        counts[a, a] = int(ok.sum())
        if ok.sum() < 2 or np.ptp(cols[a][ok]) == 0:
            mat[a, a] = math.nan
        for b in range(a + 1, k):
            both = ok & ~np.isnan(cols[b])
            counts[a, b] = counts[b, a] = int(both.sum())
            r = _pearson(cols[a][both], cols[b][both]) if both.sum() >= 2 else math.nan
            mat[a, b] = mat[b, a] = r
            if math.isnan(r):
                undefined.append((variables[a], variables[b]))
            elif abs(r) > threshold:
                high.append((variables[a], variables[b], r))
    return CorrelationResult(variables, mat, counts, high, undefined, threshold)


@dataclass(frozen=True)
class VifRow:
    name: str
    vif: float
    reciprocal: float


@dataclass
class VifReport:
    rows: list
    mean_vif: float
    n_obs: int
    flagged: list
    threshold: float = VIF_THRESHOLD


def vif(panel: PanelDataset, regressors: Sequence[str], threshold: float = VIF_THRESHOLD,
        collinear_tol: float = 1e-12) -> VifReport:
    """Variance inflation factors from auxiliary regressions on complete cases.

    A regressor that is an exact linear combination of the others gets
    ``inf`` and is flagged rather than raising.
    """
    regressors = list(regressors)
    if len(regressors) < 2:
        raise ValueError("vif needs at least two regressors")
    panel.require(regressors)
    X = np.column_stack([panel[r].ravel() for r in regressors])
    X = X[~np.isnan(X).any(axis=1)]
    n = X.shape[0]
    if n <= len(regressors):
        raise ValueError(f"only {n} complete rows for {len(regressors)} regressors")
    rows, flagged = [], []
    ones = np.ones((n, 1))
    for j, name in enumerate(regressors):
        y = X[:, j]
        others = np.hstack([ones, np.delete(X, j, axis=1)])
        tss = float(((y - y.mean()) ** 2).sum())
        if tss == 0.0:
            one_minus_r2 = 0.0
        else:
            fit = lstsq(others, y, check=False)
            one_minus_r2 = fit.ssr / tss
        if one_minus_r2 <= collinear_tol:
            v = math.inf
        else:
            v = 1.0 / one_minus_r2
        rows.append(VifRow(name, v, 0.0 if math.isinf(v) else 1.0 / v))
        if v > threshold:
            flagged.append(name)
    mean_vif = float(np.mean([r.vif for r in rows]))
    return VifReport(rows, mean_vif, n, flagged, threshold)
