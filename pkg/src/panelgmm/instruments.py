"""
Instrument directives and instrument-matrix assembly for difference GMM.

Directive strings follow a small lag-operator grammar::

    spec  := group+ ["collapse"]
    group := ["D."] "(" term+ ")" | term
    term  := [range] lag* name
    lag   := "L" [digits] "."          (L. is lag 1; stacked lags add)
    range := "L(" digits "/" [digits] ")."

A range makes a term GMM-style (one instrument column per period and lag,
block-diagonal); everything else is IV-style (one column).  ``D.(...)``
marks its terms as differenced.  Parsed with ``style="gmm"``, a leading
single lag such as ``L.L.llpr`` is read as the lag range ``L(1/1).``.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .panel import PanelDataset, shift
from .results import ModelSpec, lag_name

__all__ = [
    "InstrumentDirective",
    "InstrumentSyntaxError",
    "InstrumentError",
    "InstrumentCountWarning",
    "InstrumentColumn",
    "InstrumentPlan",
    "parse_instrument_spec",
    "format_instrument_spec",
    "first_difference",
    "build_instrument_matrix",
    "select_directives",
    "INSTRUMENT_RULE",
]

INSTRUMENT_RULE = "the instrument count should not exceed the number of groups"


class InstrumentSyntaxError(ValueError):
    """Malformed directive string; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, text: str, offset: int, expected: str):
        self.text = text
        self.offset = offset
        self.expected = expected
        super().__init__(f"{message} at offset {offset} (expected {expected}): {text!r}")


class InstrumentError(ValueError):
    pass


class InstrumentCountWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InstrumentDirective:
    style: str
    base_variable: str
    inner_lag: int = 0
    differenced: bool = False
    lag_from: int | None = None
    lag_to: int | None = None
    collapsed: bool = False

    def __post_init__(self):
        if self.style not in ("iv", "gmm"):
            raise ValueError(f"unknown directive style {self.style!r}")
        if self.inner_lag < 0:
            raise ValueError("inner_lag must be >= 0")
        if self.style == "iv":
            if self.lag_from is not None or self.lag_to is not None or self.collapsed:
                raise ValueError("iv-style directives take no lag range or collapse")
        else:
            if self.lag_from is None or self.lag_from < 1:
                raise ValueError("gmm-style directives need lag_from >= 1")
            if self.lag_to is not None and self.lag_to < self.lag_from:
                raise ValueError("lag_to must be >= lag_from")
            if self.differenced:
                raise ValueError("gmm-style directives use levels; differencing is not supported")

    def with_collapse(self, collapsed: bool) -> "InstrumentDirective":
        if self.style != "gmm":
            return self
        return InstrumentDirective(self.style, self.base_variable, self.inner_lag, False,
                                   self.lag_from, self.lag_to, collapsed)


# ---------------------------------------------------------------------------
# parsing

_RANGE = re.compile(r"L\((\d+)/(\d*)\)\.")
_LAG = re.compile(r"L(\d*)\.")
_DIFF = re.compile(r"D\.")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_WS = re.compile(r"\s*")


class _Parser:
    def __init__(self, text: str, style: str | None):
        self.text = text
        self.pos = 0
        self.style = style

    def error(self, message, expected):
        raise InstrumentSyntaxError(message, self.text, self.pos, expected)

    def skip_ws(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def at_end(self):
        self.skip_ws()
        return self.pos >= len(self.text)

    def parse(self) -> list:
        out = []
        collapse = False
        if self.at_end():
            self.error("empty instrument specification", "a term or group")
        while not self.at_end():
            if self.text.startswith("collapse", self.pos) and not _NAME.match(
                    self.text, self.pos + 8) and self._rest_is_blank(self.pos + 8):
                collapse = True
                self.pos += 8
                break
            out.extend(self.group())
        if not out:
            self.error("no instruments before 'collapse'", "a term or group")
        if collapse:
            out = [d.with_collapse(True) for d in out]
        return out

    def _rest_is_blank(self, pos):
        return not self.text[pos:].strip()

    def group(self) -> list:
        start = self.pos
        differenced = False
        m = _DIFF.match(self.text, self.pos)
        if m and self.text.startswith("(", m.end()):
            differenced = True
            self.pos = m.end()
        if self.text.startswith("(", self.pos):
            self.pos += 1
            terms = []
            while True:
                self.skip_ws()
                if self.pos >= len(self.text):
                    self.error("unterminated group", "')'")
                if self.text.startswith(")", self.pos):
                    self.pos += 1
                    break
                terms.append(self.term(differenced))
            if not terms:
                self.pos = start
                self.error("empty group", "at least one term inside '(...)'")
            return terms
        return [self.term(False)]

    def term(self, differenced: bool) -> InstrumentDirective:
        start = self.pos
        m = _DIFF.match(self.text, self.pos)
        if m and not differenced:
            differenced = True
            self.pos = m.end()
        rng = None
        m = _RANGE.match(self.text, self.pos)
        if m:
            rng = (int(m.group(1)), int(m.group(2)) if m.group(2) else None)
            self.pos = m.end()
        lags = []
        while True:
            m = _LAG.match(self.text, self.pos)
            if not m:
                break
            lags.append(int(m.group(1)) if m.group(1) else 1)
            self.pos = m.end()
        m = _NAME.match(self.text, self.pos)
        if not m:
            if self.text.startswith("L(", self.pos):
                self.error("malformed lag range", "'L(<from>/<to>).'")
            self.error("malformed term", "a lag operator 'L.', 'L<k>.' or a series name")
        name = m.group(0)
        self.pos = m.end()
        if self.pos < len(self.text) and not (self.text[self.pos].isspace() or self.text[self.pos] == ")"):
            self.error("unexpected character after series name", "whitespace or ')'")
        if rng is None and self.style == "gmm" and not differenced:
            if not lags:
                self.pos = start
                self.error("gmm-style term without a lag", "a lag range such as 'L(1/).' or 'L.'")
            first = lags.pop(0)
            rng = (first, first)
        if rng is not None:
            if differenced:
                self.pos = start
                self.error("lag range inside a differenced group", "a plain iv term")
            lo, hi = rng
            if lo < 1 or (hi is not None and hi < lo):
                self.pos = start
                self.error("invalid lag range", "1 <= from <= to")
            return InstrumentDirective("gmm", name, sum(lags), False, lo, hi)
        return InstrumentDirective("iv", name, sum(lags), differenced)


def parse_instrument_spec(text: str, style: str | None = None) -> list:
    """Parse a directive string into :class:`InstrumentDirective` objects.

    Parameters
    ----------
    text : str
        e.g. ``"D.(L2.roa L3.gdp L.inf L.size nplr)"`` or ``"L(1/).L3.llpr"``.
    style : {None, "gmm"}
        ``"gmm"`` parses every undifferenced term as GMM-style, reading its
        first lag operator as a one-lag range.

    Raises
    ------
    InstrumentSyntaxError
        With the byte offset and a hint of what was expected.
    """
    if style not in (None, "iv", "gmm"):
        raise ValueError(f"unknown style {style!r}")
    return _Parser(text, None if style == "iv" else style).parse()


def _lag_prefix(k: int) -> str:
    if k == 0:
        return ""
    return "L." if k == 1 else f"L{k}."


def _format_term(d: InstrumentDirective, style: str | None) -> str:
    if d.style == "iv":
        return _lag_prefix(d.inner_lag) + d.base_variable
    if style == "gmm" and d.lag_to == d.lag_from:
        rng = _lag_prefix(d.lag_from)
    else:
        rng = f"L({d.lag_from}/{'' if d.lag_to is None else d.lag_to})."
    return rng + _lag_prefix(d.inner_lag) + d.base_variable


def format_instrument_spec(directives, style: str | None = None) -> str:
    """Inverse of :func:`parse_instrument_spec` (canonical spelling)."""
    parts = []
    run = []
    for d in directives:
        if d.style == "iv" and d.differenced:
            run.append(_format_term(d, style))
            continue
        if run:
            parts.append("D.(" + " ".join(run) + ")")
            run = []
        parts.append(_format_term(d, style))
    if run:
        parts.append("D.(" + " ".join(run) + ")")
    if any(d.style == "gmm" and d.collapsed for d in directives):
        parts.append("collapse")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# differencing


def first_difference(panel: PanelDataset, variables) -> PanelDataset:
    """Panel of first differences ``x_t - x_{t-1}``.

    Each entity's first observed period, and any period following a gap,
    becomes missing.  Series keep their names.
    """
    variables = list(variables)
    panel.require(variables)
    return PanelDataset(panel.entities, panel.periods,
                        {v: _diff(panel[v]) for v in variables}, panel.diagnostics)


def _diff(arr: np.ndarray) -> np.ndarray:
    return arr - shift(arr, 1)


# ---------------------------------------------------------------------------
# instrument matrix


@dataclass(frozen=True)
class InstrumentColumn:
    directive: int
    period: int | None
    lag: int | None

    def label(self, directives) -> str:
        d = directives[self.directive]
        if d.style == "iv":
            return ("D." if d.differenced else "") + _lag_prefix(d.inner_lag) + d.base_variable
        inner = _lag_prefix(d.inner_lag) + d.base_variable
        where = "" if self.period is None else f"@{self.period}"
        return f"{_lag_prefix(self.lag)}{inner}{where}"


@dataclass
class InstrumentPlan:
    """Realized instrument set for one difference-GMM specification.

    Rows (``entity_idx``, ``period_idx``) are the usable differenced
    observations sorted by entity then period; ``y``, ``X`` and ``Z`` are
    stacked over those rows.
    """

    directives: tuple
    columns: list
    realized_column_count: int
    group_count: int
    max_gmm_lag_depth: int | None
    depth_auto: bool
    collapse: bool
    names: list
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    entity_idx: np.ndarray
    period_idx: np.ndarray
    entities: tuple
    periods: tuple
    rows_lost: int
    auto_dependent: bool
    warnings: list = field(default_factory=list)

    @property
    def column_labels(self) -> list:
        return [c.label(self.directives) for c in self.columns]

    _populated: np.ndarray = field(default=None, repr=False)

    @property
    def per_entity_blocks(self) -> dict:
        """entity -> list of (period, populated column labels)."""
        labels = self.column_labels
        out = {}
        for r in range(self.Z.shape[0]):
            e = self.entities[self.entity_idx[r]]
            p = self.periods[self.period_idx[r]]
            cols = [labels[j] for j in np.flatnonzero(self._populated[r])]
            out.setdefault(e, []).append((p, cols))
        return out

    @property
    def iv_text(self) -> str:
        return format_instrument_spec([d for d in self.directives if d.style == "iv"])

    @property
    def gmm_text(self) -> str:
        return format_instrument_spec([d for d in self.directives if d.style == "gmm"], style="gmm")


def _iv_values(panel: PanelDataset, d: InstrumentDirective) -> np.ndarray:
    base = shift(panel[d.base_variable], d.inner_lag)
    return _diff(base) if d.differenced else base


def _effective_range(d: InstrumentDirective, depth: int | None, t_max: int):
    hi = d.lag_to if d.lag_to is not None else t_max
    if depth is not None:
        hi = min(hi, d.lag_from + depth - 1)
    return d.lag_from, hi


def _gmm_cells(panel, directives, gmm_idx, rows, depth, collapse):
    """Enumerate populated gmm cells: list of (row, column key, value)."""
    ii, tt = rows
    T = panel.n_periods
    cells = []
    for j in gmm_idx:
        d = directives[j]
        base = panel[d.base_variable]
        lo, hi = _effective_range(d, depth, T)
        for lag in range(lo, hi + 1):
            src = tt - d.inner_lag - lag
            ok = src >= 0
            r_ok = np.flatnonzero(ok)
            vals = np.full(ii.size, np.nan)
            vals[r_ok] = base[ii[r_ok], src[r_ok]]
            good = np.flatnonzero(~np.isnan(vals))
            for r in good:
                key = (j, None if (collapse or d.collapsed) else int(tt[r]), lag)
                cells.append((r, key, vals[r]))
    return cells


def _column_keys(cells):
    return sorted({c[1] for c in cells}, key=lambda k: (k[0], -1 if k[1] is None else k[1], k[2]))


def _max_available_lag(panel, directives, gmm_idx, rows):
    _, tt = rows
    if tt.size == 0:
        return 1
    return max(int(tt.max()) - directives[j].inner_lag - directives[j].lag_from + 1 for j in gmm_idx)


def select_directives(directives, subset) -> list:
    """Indices of ``directives`` picked by ``subset``.

    ``subset`` may be ``"iv"`` / ``"gmm"`` (by style), a series name (by base
    variable), an iterable of indices, or a predicate on a directive.
    """
    if subset is None:
        return []
    if callable(subset):
        return [i for i, d in enumerate(directives) if subset(d)]
    if isinstance(subset, str):
        if subset in ("iv", "gmm"):
            return [i for i, d in enumerate(directives) if d.style == subset]
        return [i for i, d in enumerate(directives) if d.base_variable == subset]
    idx = sorted({int(i) for i in subset})
    for i in idx:
        if not 0 <= i < len(directives):
            raise IndexError(f"directive index {i} out of range")
    return idx


def _dependent_directive(spec: ModelSpec) -> InstrumentDirective:
    return InstrumentDirective("gmm", spec.dependent, 0, False, 2, None)


def _resolve_directives(spec: ModelSpec, directives, collapse: bool):
    directives = list(spec.instrument_directives if directives is None else directives)
    auto = not any(d.base_variable == spec.dependent for d in directives)
    if auto:
        directives.insert(0, _dependent_directive(spec))
    if collapse:
        directives = [d.with_collapse(True) for d in directives]
    return tuple(directives), auto


def build_instrument_matrix(panel: PanelDataset, spec: ModelSpec, max_gmm_lag_depth="auto",
                            collapse: bool = False, directives=None, exclude=None,
                            rows=None) -> InstrumentPlan:
    """Assemble the stacked differenced data and instrument matrix.

    The differenced equation regresses ``D.y`` on the differenced dependent
    lags and regressors (no intercept).  The lagged dependent variable is
    instrumented GMM-style by ``y_{t-2}`` and deeper unless a directive
    already names the dependent variable.

    Parameters
    ----------
    max_gmm_lag_depth : int, None or "auto"
        Maximum number of lags per GMM-style directive; ``None`` means all
        available.  ``"auto"`` picks the largest depth that keeps the
        instrument count at or below the number of groups.
    collapse : bool
        Collapse every GMM-style directive to one column per lag.
    exclude : selector, optional
        Directives to leave out (see :func:`select_directives`); used by
        the difference-in-Sargan test.
    rows : tuple of arrays, optional
        Fix the estimation sample to these ``(entity_idx, period_idx)`` rows.

    Raises
    ------
    InstrumentError
        Fewer instrument columns than parameters.
    """
    if spec.dep_lag_order < 1:
        raise InstrumentError("difference GMM needs dep_lag_order >= 1")
    directives, auto = _resolve_directives(spec, directives, collapse)
    panel.require({spec.dependent, *spec.regressors, *(d.base_variable for d in directives)})
    dropped = set(select_directives(directives, exclude)) if exclude is not None else set()
    active = [i for i in range(len(directives)) if i not in dropped]

    y_lvl = panel[spec.dependent]
    dy = _diff(y_lvl)
    xcols = [_diff(shift(y_lvl, k)) for k in range(1, spec.dep_lag_order + 1)]
    names = [lag_name(spec.dependent, k) for k in range(1, spec.dep_lag_order + 1)]
    xcols += [_diff(panel[r]) for r in spec.regressors]
    names += list(spec.regressors)
    iv_all = [i for i, d in enumerate(directives) if d.style == "iv"]
    iv_vals = {i: _iv_values(panel, directives[i]) for i in iv_all}

    candidate = ~np.isnan(dy)
    ok = candidate.copy()
    for c in xcols:
        ok &= ~np.isnan(c)
    for i in iv_all:
        ok &= ~np.isnan(iv_vals[i])
    if rows is None:
        ii, tt = np.nonzero(ok)
    else:
        ii, tt = (np.asarray(rows[0], dtype=int), np.asarray(rows[1], dtype=int))
        if not np.all(ok[ii, tt]):
            raise InstrumentError("fixed rows include observations with missing data")
    rows_lost = int(candidate.sum()) - ii.size
    if ii.size == 0:
        raise InstrumentError("no usable differenced observations")

    y = dy[ii, tt]
    X = np.column_stack([c[ii, tt] for c in xcols])
    gmm_idx = [i for i in active if directives[i].style == "gmm"]
    iv_idx = [i for i in active if directives[i].style == "iv"]
    group_count = int(np.unique(ii).size)

    def assemble(depth):
        cells = _gmm_cells(panel, directives, gmm_idx, (ii, tt), depth, collapse)
        keys = _column_keys(cells)
        return cells, keys

    depth_auto = max_gmm_lag_depth == "auto"
    if depth_auto:
        depth = None
        cells, keys = assemble(None)
        if gmm_idx and len(keys) + len(iv_idx) > group_count:
            top = _max_available_lag(panel, directives, gmm_idx, (ii, tt))
            for cand in range(max(top - 1, 1), 0, -1):
                depth = cand
                cells, keys = assemble(cand)
                if len(keys) + len(iv_idx) <= group_count:
                    break
    else:
        depth = None if max_gmm_lag_depth is None else int(max_gmm_lag_depth)
        if depth is not None and depth < 1:
            raise ValueError("max_gmm_lag_depth must be >= 1")
        cells, keys = assemble(depth)

    L = len(keys) + len(iv_idx)
    Z = np.zeros((ii.size, L))
    populated = np.zeros((ii.size, L), dtype=bool)
    col_of = {k: c for c, k in enumerate(keys)}
    for r, key, v in cells:
        c = col_of[key]
        Z[r, c] = v
        populated[r, c] = True
    columns = [InstrumentColumn(k[0], None if k[1] is None else panel.periods[k[1]], k[2]) for k in keys]
    for off, i in enumerate(iv_idx):
        Z[:, len(keys) + off] = iv_vals[i][ii, tt]
        populated[:, len(keys) + off] = True
        columns.append(InstrumentColumn(i, None, None))

    k = X.shape[1]
    if L < k:
        raise InstrumentError(
            f"under-identified: {L} instrument columns for {k} parameters"
        )
    warn_list = []
    if L > group_count:
        msg = (f"instrument count {L} exceeds the number of groups {group_count}; "
               f"{INSTRUMENT_RULE}")
        warnings.warn(msg, InstrumentCountWarning, stacklevel=2)
        warn_list.append(msg)
    plan = InstrumentPlan(
        directives=directives, columns=columns, realized_column_count=L,
        group_count=group_count, max_gmm_lag_depth=depth, depth_auto=depth_auto,
        collapse=collapse, names=names, y=y, X=X, Z=Z, entity_idx=ii, period_idx=tt,
        entities=panel.entities, periods=panel.periods, rows_lost=rows_lost,
        auto_dependent=auto, warnings=warn_list, _populated=populated,
    )
    return plan
