import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panelgmm import gmm, static
from panelgmm.distributions import chi_square, normal
from panelgmm.report import (
    Cell,
    Report,
    Section,
    Table,
    estimation_table,
    fmt_num,
    gmm_table,
    render_report,
    stars,
    test_table as build_test_table,
)
from panelgmm.results import ModelSpec, make_test

from .conftest import static_panel


def _sample_report():
    t = Table("demo", ["A", "B"])
    t.add("beta", [Cell(0.123456789, "coef", stat=2.5, p_value=0.004, provenance="m.beta"),
                   Cell(-1.5, "coef", stat=-0.4, p_value=0.2, provenance="n.beta")])
    t.add("missing", [Cell(math.nan, provenance="m.nan"), Cell(math.inf, provenance="m.inf")])
    t.add("label", [Cell("x", "text"), Cell(None, "text")])
    t.add("test", [Cell(3.2, "test", p_value=0.07, text="chi2(2)", provenance="s"),
                   Cell(None, "test")])
    t.notes.append("a note")
    s = Section("m.demo", "Demo", [t], notes=["section note"])
    return Report("title", [s, Section("m.bad", "Bad", error="boom", skipped=True)],
                  errors=["m.bad: boom"], exit_code=3)


def test_stars_thresholds():
    assert stars(0.004) == "***"
    assert stars(0.0099) == "***"
    assert stars(0.01) == "**"
    assert stars(0.049) == "**"
    assert stars(0.05) == "*"
    assert stars(0.0999) == "*"
    assert stars(0.10) == ""
    assert stars(0.2) == ""
    assert stars(None) == ""
    assert stars(math.nan) == ""


def test_fmt_num_seven_significant_digits():
    assert fmt_num(0.123456789) == "0.1234568"
    assert fmt_num(1234567.89) == "1234568"
    assert fmt_num(-2.5) == "-2.5"
    assert fmt_num(0) == "0"
    assert fmt_num(None) == "."
    assert fmt_num(math.nan) == "."
    assert fmt_num(math.inf) == "inf"


def test_coefficient_rendering():
    lines = Cell(0.123456789, "coef", stat=2.5, p_value=0.004).render()
    assert lines == ["0.1234568***", "(2.5)"]
    assert Cell(-1.5, "coef", stat=-0.4, p_value=0.2).render() == ["-1.5", "(-0.4)"]


def test_missing_test_cell_renders_dot():
    assert Cell(None, "test").render() == ["."]
    assert Cell(None, "test", text="chi2(3)").render() == ["chi2(3) = ."]


def test_json_round_trip_is_exact():
    rep = _sample_report()
    text = render_report(rep, "json")
    back = Report.from_json(text)
    assert back == rep
    # NaN becomes null, infinities become strings
    d = json.loads(text)
    cells = d["sections"][0]["tables"][0]["rows"][1]["cells"]
    assert cells[0]["value"] is None
    assert cells[1]["value"] == "inf"
    assert back.sections[0].tables[0].rows[1].cells[1].value == math.inf
    assert render_report(back, "text") == render_report(rep, "text")


def test_text_render_deterministic_and_contents():
    a = render_report(_sample_report(), "text")
    b = render_report(_sample_report(), "text")
    assert a == b
    assert "0.1234568***" in a
    assert "(2.5)" in a
    assert "chi2(2) = 3.2  p = 0.0700" in a
    assert "ERROR: boom" in a
    assert "note: section note" in a
    assert a.rstrip().endswith("exit code: 3")


def test_csv_long_format():
    out = render_report(_sample_report(), "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["section", "table", "row", "column", "kind", "value", "stat",
                             "p_value", "text", "provenance"]
    assert len(rows) == 8
    beta = rows[0]
    assert beta["row"] == "beta" and beta["column"] == "A"
    assert float(beta["value"]) == 0.123456789
    assert float(beta["p_value"]) == 0.004
    assert beta["provenance"] == "m.beta"


def test_unknown_format():
    with pytest.raises(ValueError, match="unknown format"):
        render_report(_sample_report(), "xml")


def _numeric_cells(table):
    for r in table.rows:
        for c in r.cells:
            if c.kind != "text" and c.value is not None:
                yield r.label, c


def test_builders_attach_provenance(rng):
    panel = static_panel(rng)
    spec = ModelSpec("y", ("x1", "x2"))
    fits = {"POLS": static.pooled_ols(panel, spec), "FE": static.fixed_effects(panel, spec)}
    tab = estimation_table("static", fits)
    cells = list(_numeric_cells(tab))
    assert cells
    assert all(c.provenance for _, c in cells)
    tt = build_test_table("tests", [("w", make_test("w", 3.0, chi_square(2), "h0", "rej", "acc"))])
    assert all(c.provenance for _, c in _numeric_cells(tt))


def test_gmm_table_rows(dyn_panel):
    spec = ModelSpec("y", ("x1", "x2"), dep_lag_order=1,
                     instrument_directives=("D.(x1 x2)", "L(2/4).y"))
    r = gmm.estimate_one_step(dyn_panel, spec, robust=True)
    ds = {"iv": gmm.difference_in_sargan(dyn_panel, r, "iv")}
    tab = gmm_table("gmm", {"m": r}, {"m": ds})
    labels = [row.label for row in tab.rows]
    for want in ("No. of instruments", "Arellano-Bond AR(1)", "Arellano-Bond AR(2)",
                 "Sargan test of overid. restrictions", "iv: Sargan test excluding group",
                 "iv: Difference (H0 = exogenous)"):
        assert want in labels
    assert all(c.provenance for _, c in _numeric_cells(tab))
    assert "robust standard errors" in tab.notes[0]
    text = render_report(Report("r", [Section("g", "G", [tab])]))
    assert "z = " in text and "chi2(" in text


@given(st.floats(allow_nan=True, allow_infinity=True, width=64),
       st.one_of(st.none(), st.floats(0, 1)))
def test_json_round_trip_property(v, p):
    rep = Report("t", [Section("s", "S", [Table("x", ["c"], notes=[])])])
    rep.sections[0].tables[0].add("r", [Cell(v, "coef", stat=v, p_value=p, provenance="p")])
    back = Report.from_json(rep.to_json())
    c = back.sections[0].tables[0].rows[0].cells[0]
    if math.isnan(v):
        assert c.value is None
    else:
        assert c.value == v
    assert render_report(back) == render_report(rep)


def test_normal_test_label():
    t = make_test("z", -1.0, normal(), "h0", "r", "a", tail="two-sided")
    tab = build_test_table("t", [("z", t)])
    assert tab.rows[0].cells[1].value == "z"
    assert np.isclose(tab.rows[0].cells[2].value, 0.3173105, atol=1e-7)
