import math

import numpy as np
import pytest

from panelgmm.io import (BANK_COLUMNS, CsvSchemaError, ingest_csv, read_bank_csv, read_macro_csv,
                         write_panel_csv)
from panelgmm.panel import PanelDataset


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_toy_panel_file(tmp_path):
    f = write(tmp_path / "p.csv", "entity_id,year,x,y\na,2015,1.5,\na,2016,2,3\n"
                                  "b,2015,,4\nb,2016,5,6\nb,2017,7,8\n")
    p = ingest_csv(f)
    assert p.entities == ("a", "b") and p.periods == (2015, 2016, 2017)
    assert p.shape == (2, 3)
    np.testing.assert_array_equal(p.missing_mask("x"), [[False, False, True], [True, False, False]])
    np.testing.assert_array_equal(p.missing_mask("y"), [[True, False, True], [False, False, False]])


def test_duplicate_rows_cite_both_lines(tmp_path):
    f = write(tmp_path / "p.csv", "entity_id,year,x\na,2015,1\nb,2015,2\na,2015,3\n")
    with pytest.raises(CsvSchemaError, match="rows 2 and 4") as exc:
        ingest_csv(f)
    assert exc.value.row == 4


def test_missing_column_lists_found_and_expected(tmp_path):
    f = write(tmp_path / "m.csv", "year,gdp\n2015,6.7\n")
    with pytest.raises(CsvSchemaError) as exc:
        read_macro_csv(f)
    msg = str(exc.value)
    assert "['inf']" in msg and "found ['year', 'gdp']" in msg and "expected" in msg


def test_non_numeric_cell_location(tmp_path):
    f = write(tmp_path / "p.csv", "entity_id,year,x\na,2015,1\na,2016,abc\n")
    with pytest.raises(CsvSchemaError) as exc:
        ingest_csv(f)
    assert (exc.value.row, exc.value.column) == (3, "x")
    assert "row 3" in str(exc.value) and "'x'" in str(exc.value)


@pytest.mark.parametrize("cell", ["1,5", "1 000", "nan", "inf"])
def test_rejected_number_formats(tmp_path, cell):
    f = write(tmp_path / "p.csv", f'entity_id,year,x\na,2015,"{cell}"\n')
    with pytest.raises(CsvSchemaError):
        ingest_csv(f)


def test_non_integer_year(tmp_path):
    f = write(tmp_path / "p.csv", "entity_id,year,x\na,2015.5,1\n")
    with pytest.raises(CsvSchemaError, match="integer year"):
        ingest_csv(f)


def test_empty_and_missing_files(tmp_path):
    with pytest.raises(CsvSchemaError, match="empty"):
        ingest_csv(write(tmp_path / "e.csv", ""))
    with pytest.raises(CsvSchemaError, match="no data rows"):
        ingest_csv(write(tmp_path / "h.csv", "entity_id,year,x\n"))
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "none.csv")


def test_duplicate_header(tmp_path):
    with pytest.raises(CsvSchemaError, match="duplicate column"):
        ingest_csv(write(tmp_path / "d.csv", "entity_id,year,x,x\na,1,2,3\n"))


def test_macro_years_must_be_contiguous(tmp_path):
    f = write(tmp_path / "m.csv", "year,gdp,inf\n2015,6.7,0.6\n2017,6.8,3.5\n")
    with pytest.raises(CsvSchemaError, match="2016"):
        read_macro_csv(f)


def bank_row(e, y, assets):
    vals = dict(entity_id=e, year=y, net_profit_after_tax=assets * 0.01, total_assets=assets,
                total_equity=assets * 0.1, net_interest_income=assets * 0.03,
                earning_assets=assets * 0.9, npl=assets * 0.02, gross_loans=assets * 0.7,
                provisions=assets * 0.01, tier1=assets * 0.06, tier2=assets * 0.03,
                rwa=assets * 0.8)
    return ",".join(str(vals[c]) for c in BANK_COLUMNS)


def test_bank_schema_builds_ratios(tmp_path):
    rows = [bank_row("A", 2015, 1000.0), bank_row("A", 2016, 1200.0), bank_row("B", 2016, 500.0)]
    b = write(tmp_path / "b.csv", ",".join(BANK_COLUMNS) + "\n" + "\n".join(rows) + "\n")
    m = write(tmp_path / "m.csv", "year,gdp,inf\n2015,6.7,0.6\n2016,6.2,2.7\n")
    assert len(read_bank_csv(b)) == 3
    p = ingest_csv({"bank": b, "macro": m}, "bank")
    assert p.entities == ("A", "B")
    assert p["ROA"][0, 1] == pytest.approx(12.0 / 1100.0 * 100)
    assert p["CAR"][1, 1] == pytest.approx(9 / 0.8)
    assert math.isnan(p["ROA"][1, 1])
    assert ingest_csv((b, m), "bank") == p


def test_unknown_schema():
    with pytest.raises(ValueError):
        ingest_csv("x.csv", "xml")


def test_unbalanced_26_by_10_roundtrip(tmp_path):
    rng = np.random.default_rng(2024)
    ents = [f"bank{i:02d}" for i in range(26)]
    cells = [(e, y) for e in ents for y in range(2008, 2018)]
    drop = set(rng.choice(np.arange(len(cells)), size=5, replace=False).tolist())
    keep = [c for k, c in enumerate(cells) if k not in drop]
    assert len(keep) == 255
    names = ["ROA", "NPLR", "SIZE"]
    data = {n: rng.normal(size=len(keep)) * 10 ** rng.uniform(-3, 3, size=len(keep)) for n in names}
    data["NPLR"][rng.random(len(keep)) < 0.05] = np.nan
    lines = ["entity_id,year," + ",".join(names)]
    for k, (e, y) in enumerate(keep):
        lines.append(f"{e},{y}," + ",".join("" if np.isnan(data[n][k]) else repr(float(data[n][k]))
                                            for n in names))
    src = write(tmp_path / "in.csv", "\n".join(lines) + "\n")
    first = ingest_csv(src)
    assert first.shape == (26, 10)
    out = tmp_path / "out.csv"
    write_panel_csv(first, out)
    second = ingest_csv(out)
    assert second == first
    write_panel_csv(second, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()


def test_write_skips_empty_rows(tmp_path):
    p = PanelDataset(["a"], [1, 2, 3], {"x": [[1.0, np.nan, 3.0]]})
    write_panel_csv(p, tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text().splitlines() == ["entity_id,year,x", "a,1,1.0", "a,3,3.0"]
