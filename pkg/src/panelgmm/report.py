"""
Report model and rendering (text, JSON, CSV).

A :class:`Report` is a list of :class:`Section` objects, each holding
:class:`Table` objects whose cells record the value, an optional test
statistic and p-value, and the operation that produced them.  Text output
uses 7 significant digits with coefficient t/z statistics in parentheses
beneath the estimate; JSON and CSV keep full precision.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from .distributions import format_p
from .results import CONST, TestResult

__all__ = [
    "Cell",
    "Row",
    "Table",
    "Section",
    "Report",
    "stars",
    "fmt_num",
    "render_report",
    "test_table",
    "estimation_table",
    "gmm_table",
    "descriptive_table",
    "correlation_table",
    "vif_table",
    "unit_root_table",
    "monte_carlo_table",
]

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))
SIG_DIGITS = 7


def stars(p) -> str:
    """``***`` below 1%, ``**`` below 5%, ``*`` below 10%."""
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _clean(v):
    # numpy scalars become float, NaN becomes None
    if v is None or isinstance(v, (str, bool)):
        return v
    v = float(v)
    return None if math.isnan(v) else v


def _jsonable(obj):
    # infinities are not valid JSON; they travel as strings
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def _unclean(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return v


def fmt_num(v, digits: int = SIG_DIGITS) -> str:
    if v is None:
        return "."
    if isinstance(v, str):
        return v
    if math.isnan(v):
        return "."
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0:
        return "0"
    return f"{v:.{digits}g}"


@dataclass
class Cell:
    """One table cell.

    ``kind`` is ``number``, ``p`` (a p-value, 4 decimals), ``text``,
    ``coef`` (estimate with ``stat`` and ``p_value``; rendered with stars)
    or ``test`` (statistic with its distribution label in ``text`` and
    ``p_value``).
    """

    value: object = None
    kind: str = "number"
    stat: float | None = None
    p_value: float | None = None
    text: str = ""
    provenance: str = ""

    def __post_init__(self):
        self.value = _clean(self.value) if self.kind != "text" else self.value
        self.stat = _clean(self.stat)
        self.p_value = _clean(self.p_value)

    def render(self) -> list:
        """Text lines for the cell (coefficients take two)."""
        if self.kind == "text":
            return ["" if self.value is None else str(self.value)]
        if self.kind == "p":
            return [format_p(self.value)]
        if self.kind == "coef":
            return [fmt_num(self.value) + stars(self.p_value), f"({fmt_num(self.stat)})"]
        if self.kind == "test":
            if self.value is None:
                return [f"{self.text} = ." if self.text else "."]
            lead = f"{self.text} = " if self.text else ""
            return [f"{lead}{fmt_num(self.value)}  p = {format_p(self.p_value)}"]
        return [fmt_num(self.value)]


@dataclass
class Row:
    label: str
    cells: list


@dataclass
class Table:
    title: str
    columns: list
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, label: str, cells) -> None:
        self.rows.append(Row(label, list(cells)))


@dataclass
class Section:
    key: str
    title: str
    tables: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    error: str | None = None
    skipped: bool = False


@dataclass
class Report:
    title: str
    sections: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    exit_code: int = 0

    def section(self, key: str) -> Section:
        for s in self.sections:
            if s.key == key:
                return s
        raise KeyError(key)

    def to_dict(self) -> dict:
        """Plain JSON-ready data; NaN is None and infinities are ``"inf"``/``"-inf"``."""
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        sections = []
        for s in d["sections"]:
            tables = []
            for t in s["tables"]:
                rows = [Row(r["label"], [_cell_from(c) for c in r["cells"]]) for r in t["rows"]]
                tables.append(Table(t["title"], list(t["columns"]), rows, list(t["notes"])))
            sections.append(Section(s["key"], s["title"], tables, list(s["notes"]), s["error"],
                                    s["skipped"]))
        return cls(d["title"], sections, list(d["errors"]), d["exit_code"])

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def _cell_from(c: dict) -> Cell:
    return Cell(_unclean(c["value"]) if c["kind"] != "text" else c["value"], c["kind"],
                _unclean(c["stat"]), _unclean(c["p_value"]), c["text"], c["provenance"])


# ---------------------------------------------------------------------------
# rendering


def _render_table(t: Table) -> list:
    header = ["", *t.columns]
    body = []
    for r in t.rows:
        rendered = [c.render() for c in r.cells]
        height = max([1, *(len(x) for x in rendered)])
        for k in range(height):
            label = r.label if k == 0 else ""
            body.append([label, *((x[k] if k < len(x) else "") for x in rendered)])
    ncol = max(len(header), *(len(b) for b in body)) if body else len(header)
    header += [""] * (ncol - len(header))
    body = [b + [""] * (ncol - len(b)) for b in body]
    widths = [max(len(row[j]) for row in [header, *body]) for j in range(ncol)]

    def line(row):
        first = row[0].ljust(widths[0])
        rest = [row[j].rjust(widths[j]) for j in range(1, ncol)]
        return "  ".join([first, *rest]).rstrip()

    rule = "-" * (sum(widths) + 2 * (ncol - 1))
    out = [t.title, rule, line(header), rule]
    out += [line(b) for b in body]
    out.append(rule)
    out += [f"  {n}" for n in t.notes]
    return out


def render_text(report: Report) -> str:
    out = [report.title, "=" * len(report.title), ""]
    for s in report.sections:
        out.append(f"[{s.title}]")
        if s.error:
            out.append(f"  ERROR: {s.error}")
        if s.skipped:
            out.append("  skipped")
        for n in s.notes:
            out.append(f"  note: {n}")
        for t in s.tables:
            out += _render_table(t)
            out.append("")
        out.append("")
    if report.errors:
        out.append("Errors:")
        out += [f"  {e}" for e in report.errors]
    out.append(f"exit code: {report.exit_code}")
    return "\n".join(out) + "\n"


def render_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "table", "row", "column", "kind", "value", "stat", "p_value", "text",
                "provenance"])
    for s in report.sections:
        for t in s.tables:
            for r in t.rows:
                for col, c in zip(t.columns, r.cells):
                    w.writerow([s.key, t.title, r.label, col, c.kind,
                                "" if c.value is None else (c.value if isinstance(c.value, str) else repr(c.value)),
                                "" if c.stat is None else repr(c.stat),
                                "" if c.p_value is None else repr(c.p_value), c.text, c.provenance])
    return buf.getvalue()


def render_report(report: Report, fmt: str = "text") -> str:
    """Render as ``text``, ``json`` or ``csv``; output is deterministic."""
    if fmt == "text":
        return render_text(report)
    if fmt == "json":
        return report.to_json() + "\n"
    if fmt == "csv":
        return render_csv(report)
    raise ValueError(f"unknown format {fmt!r}; expected text, json or csv")


# ---------------------------------------------------------------------------
# table builders


def _test_cells(t: TestResult, provenance: str) -> list:
    return [
        Cell(t.statistic if t.defined else None, provenance=provenance),
        Cell(t.distribution.label(), "text"),
        Cell(t.p_value if t.defined else None, "p", provenance=provenance),
        Cell(t.h0, "text"),
        Cell(t.decision if t.defined else f"undefined: {t.note}", "text"),
    ]


def test_table(title: str, tests, provenance: str = "") -> Table:
    """One row per test: statistic, distribution, p-value, H0 and decision."""
    t = Table(title, ["Statistic", "Distribution", "p-value", "H0", "Decision"])
    for label, res in tests:
        t.add(label, _test_cells(res, provenance or res.name))
        if res.note and res.defined:
            t.notes.append(f"{label}: {res.note}")
    return t


def _fit_rows(results: dict, table: Table) -> None:
    cols = list(results)
    table.add("Observations", [Cell(float(results[c].n_obs), provenance=f"{c}.n_obs") for c in cols])
    table.add("Groups", [Cell(float(results[c].n_entities), provenance=f"{c}.n_entities") for c in cols])
    for key, label in (("r2", "R-squared"), ("r2_within", "R-squared (within)")):
        if any(key in results[c].fit for c in cols):
            table.add(label, [Cell(results[c].fit.get(key), provenance=f"{c}.fit.{key}") for c in cols])
    if any("f_stat" in results[c].fit for c in cols):
        table.add("F-statistic", [
            Cell(results[c].fit.get("f_stat"), "test", p_value=results[c].fit.get("f_p"),
                 text=(f"F({results[c].fit['f_df'][0]},{results[c].fit['f_df'][1]})"
                       if "f_df" in results[c].fit else ""), provenance=f"{c}.fit.f_stat")
            for c in cols])
    if any("wald" in results[c].fit for c in cols):
        table.add("Wald chi2", [
            Cell(results[c].fit.get("wald"), "test", p_value=results[c].fit.get("wald_p"),
                 text=f"chi2({results[c].fit['wald_df']})" if "wald_df" in results[c].fit else "",
                 provenance=f"{c}.fit.wald")
            for c in cols])


def _coef_rows(results: dict, table: Table, hide_prefix: str = "_period_") -> None:
    cols = list(results)
    names = []
    for c in cols:
        for n in results[c].names:
            if n not in names and not n.startswith(hide_prefix):
                names.append(n)
    if CONST in names:
        names.remove(CONST)
        names.append(CONST)
    for n in names:
        cells = []
        for c in cols:
            r = results[c]
            if n in r.names:
                j = r.names.index(n)
                cells.append(Cell(r.params[j], "coef", stat=r.stats[j], p_value=r.p_values[j],
                                  provenance=f"{c}.{r.method}.{n}"))
            else:
                cells.append(Cell(None, "text", text=""))
        table.add(n, cells)


def estimation_table(title: str, results: dict) -> Table:
    """Coefficient table with one column per fitted model."""
    t = Table(title, list(results))
    _coef_rows(results, t)
    _fit_rows(results, t)
    t.notes.append("t/z statistics in parentheses; *** p<0.01, ** p<0.05, * p<0.10")
    return t


def _test_cell(res: TestResult | None, prov: str) -> Cell:
    if res is None:
        return Cell(None, "text")
    label = "z" if res.distribution.family == "normal" else res.distribution.label()
    return Cell(res.statistic if res.defined else None, "test",
                p_value=res.p_value if res.defined else None, text=label, provenance=prov)


def gmm_table(title: str, results: dict, diff_sargan: dict | None = None) -> Table:
    """Difference-GMM columns with the validity rows beneath the coefficients."""
    diff_sargan = diff_sargan or {}
    t = Table(title, list(results))
    _coef_rows(results, t)
    cols = list(results)
    aux = {c: results[c].auxiliary for c in cols}
    t.add("Observations", [Cell(float(results[c].n_obs), provenance=f"{c}.n_obs") for c in cols])
    t.add("No. of groups", [Cell(float(aux[c].group_count), provenance=f"{c}.group_count") for c in cols])
    t.add("No. of instruments", [Cell(float(aux[c].instrument_count), provenance=f"{c}.instrument_count")
                                 for c in cols])
    t.add("Instrument variables (iv)", [Cell(aux[c].plan.iv_text or ".", "text") for c in cols])
    t.add("GMM-type", [Cell(aux[c].plan.gmm_text or ".", "text") for c in cols])
    t.add("Arellano-Bond AR(1)", [_test_cell(aux[c].ar_tests[0], f"{c}.ar1") for c in cols])
    t.add("Arellano-Bond AR(2)", [_test_cell(aux[c].ar_tests[1], f"{c}.ar2") for c in cols])
    t.add("Sargan test of overid. restrictions", [_test_cell(aux[c].sargan, f"{c}.sargan") for c in cols])
    groups = []
    for c in cols:
        for g in diff_sargan.get(c, {}):
            if g not in groups:
                groups.append(g)
    for g in groups:
        t.add(f"{g}: Sargan test excluding group",
              [_test_cell(diff_sargan.get(c, {}).get(g, (None, None))[0], f"{c}.diff_sargan.{g}.excl")
               for c in cols])
        t.add(f"{g}: Difference (H0 = exogenous)",
              [_test_cell(diff_sargan.get(c, {}).get(g, (None, None))[1], f"{c}.diff_sargan.{g}.diff")
               for c in cols])
    robust = {aux[c].robust for c in cols}
    t.notes.append("one-step difference GMM; z statistics in parentheses"
                   + ("; robust standard errors" if robust == {True} else ""))
    for c in cols:
        for w in results[c].warnings:
            t.notes.append(f"{c}: {w}")
    return t


def descriptive_table(rows) -> Table:
    t = Table("Descriptive statistics", ["Obs", "Mean", "Std. dev.", "Min", "Max"])
    for r in rows:
        p = f"describe.{r.variable}"
        t.add(r.variable, [Cell(float(r.n_obs), provenance=p), Cell(r.mean, provenance=p),
                           Cell(r.std_dev, provenance=p), Cell(r.min, provenance=p),
                           Cell(r.max, provenance=p)])
    return t


def correlation_table(res) -> Table:
    t = Table("Correlation matrix", list(res.variables))
    for i, a in enumerate(res.variables):
        t.add(a, [Cell(res.matrix[i, j], provenance="correlation_matrix") if j <= i
                  else Cell("", "text") for j in range(len(res.variables))])
    for a, b, r in res.high_pairs:
        t.notes.append(f"|corr({a}, {b})| = {fmt_num(abs(r))} exceeds {res.threshold}")
    for a, b in res.undefined_pairs:
        t.notes.append(f"corr({a}, {b}) undefined (zero variance)")
    return t


def vif_table(rep) -> Table:
    t = Table("Variance inflation factors", ["VIF", "1/VIF"])
    for r in rep.rows:
        t.add(r.name, [Cell(r.vif, provenance="vif"), Cell(r.reciprocal, provenance="vif")])
    t.add("Mean VIF", [Cell(rep.mean_vif, provenance="vif"), Cell("", "text")])
    if rep.flagged:
        t.notes.append(f"VIF > {rep.threshold} for: {', '.join(rep.flagged)} (multicollinearity)")
    return t


def unit_root_table(reports) -> Table:
    cols = ["Inverse chi2 P", "p", "Inverse normal Z", "p", "Inverse logit L*", "p",
            "Modified inv. chi2 Pm", "p", "Decision"]
    t = Table("Fisher-type unit-root tests (ADF)", cols)
    for rep in reports:
        cells = []
        for key in ("P", "Z", "L*", "Pm"):
            x = rep.test(key)
            cells += [Cell(x.statistic, provenance=f"fisher_unit_root.{rep.variable}.{key}"),
                      Cell(x.p_value, "p", provenance=f"fisher_unit_root.{rep.variable}.{key}")]
        cells.append(Cell(rep.decision, "text"))
        t.add(rep.variable, cells)
        t.notes += [f"{rep.variable}: {w}" for w in rep.warnings]
    if reports:
        t.notes.append(f"H0: all panels contain unit roots; decision policy {reports[0].policy!r} "
                       f"at {reports[0].level}")
    return t


def monte_carlo_table(summary) -> list:
    c = Table(f"Monte Carlo: {summary.estimator} ({summary.replications} replications)",
              ["True", "Mean", "Bias", "RMSE", "Coverage 95%"])
    for x in summary.per_coefficient:
        c.add(x.name, [Cell(x.true_value, provenance="monte_carlo"), Cell(x.mean_estimate, provenance="monte_carlo"),
                       Cell(x.mean_bias, provenance="monte_carlo"), Cell(x.rmse, provenance="monte_carlo"),
                       Cell(x.coverage, provenance="monte_carlo")])
    c.notes.append(f"failed replications: {summary.failure_count}")
    out = [c]
    if summary.per_test:
        t = Table("Rejection rates", ["Level", "Rejection rate", "Defined"])
        for x in summary.per_test:
            t.add(x.name, [Cell(x.level, provenance="monte_carlo"), Cell(x.rejection_rate, provenance="monte_carlo"),
                           Cell(float(x.n_defined), provenance="monte_carlo")])
        out.append(t)
    return out
