"""
CSV ingestion and export.

Three schemas are understood:

``bank``
    ``entity_id, year`` and the raw balance-sheet columns of
    :data:`BANK_COLUMNS`; converted to ratios by
    :func:`panelgmm.panel.compute_ratios` together with a ``macro`` file.
``macro``
    ``year, gdp, inf``.
``panel``
    ``entity_id, year`` followed by any numeric series columns.

Empty cells are missing values.  Numbers use ``.`` as the decimal point
and no thousands separators.
"""
from __future__ import annotations

import csv
import math
import os
from pathlib import Path

from .panel import MacroRecord, PanelDataset, RawBankRecord, compute_ratios

__all__ = [
    "CsvSchemaError",
    "BANK_COLUMNS",
    "MACRO_COLUMNS",
    "read_bank_csv",
    "read_macro_csv",
    "read_panel_csv",
    "ingest_csv",
    "write_panel_csv",
]

# csv column -> RawBankRecord field
BANK_COLUMNS = {
    "entity_id": "entity_id",
    "year": "period",
    "net_profit_after_tax": "net_profit_after_tax",
    "total_assets": "total_assets",
    "total_equity": "total_equity",
    "net_interest_income": "net_interest_income",
    "earning_assets": "earning_assets",
    "npl": "non_performing_loans",
    "gross_loans": "gross_loans",
    "provisions": "credit_loss_provision",
    "tier1": "tier1_capital",
    "tier2": "tier2_capital",
    "rwa": "risk_weighted_assets",
}
MACRO_COLUMNS = ("year", "gdp", "inf")
PANEL_KEYS = ("entity_id", "year")


class CsvSchemaError(ValueError):
    """Malformed CSV input; ``path``, ``row`` (1-based, header = 1) and ``column`` locate it."""

    def __init__(self, message: str, path=None, row: int | None = None, column: str | None = None):
        self.path = None if path is None else str(path)
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


def _read(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvSchemaError("file is empty", path) from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    return path, header, rows


def _check_header(path, header, required) -> dict:
    missing = [c for c in required if c not in header]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise CsvSchemaError(f"duplicate column(s) {dupes}", path)
    if missing:
        raise CsvSchemaError(
            f"missing required column(s) {missing}; found {header}, expected {list(required)}", path
        )
    return {h: j for j, h in enumerate(header)}


def _number(text: str, path, row, column) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        if "," in text or text.lower() in ("nan", "inf", "-inf", "infinity", "-infinity"):
            raise ValueError
        return float(text)
    except ValueError:
        raise CsvSchemaError(f"non-numeric value {text!r}", path, row, column) from None


def _integer(text: str, path, row, column) -> int:
    v = _number(text, path, row, column)
    if math.isnan(v) or not v.is_integer():
        raise CsvSchemaError(f"expected an integer year, got {text!r}", path, row, column)
    return int(v)


def _cell(r, j):
    return r[j] if j < len(r) else ""


def _check_unique(path, keys_rows):
    seen = {}
    for key, row in keys_rows:
        if key in seen:
            raise CsvSchemaError(
                f"duplicate (entity, year) {key} at rows {seen[key]} and {row}", path, row
            )
        seen[key] = row


def read_bank_csv(path) -> list:
    """Rows of a ``bank`` file as :class:`RawBankRecord` objects."""
    path, header, rows = _read(path)
    col = _check_header(path, header, BANK_COLUMNS)
    out, keys = [], []
    for line, r in rows:
        entity = _cell(r, col["entity_id"]).strip()
        if not entity:
            raise CsvSchemaError("empty entity_id", path, line, "entity_id")
        year = _integer(_cell(r, col["year"]), path, line, "year")
        kw = {"entity_id": entity, "period": year}
        for c, f in BANK_COLUMNS.items():
            if f in kw:
                continue
            kw[f] = _number(_cell(r, col[c]), path, line, c)
        keys.append(((entity, year), line))
        out.append(RawBankRecord(**kw))
    _check_unique(path, keys)
    return out


def read_macro_csv(path) -> list:
    """Rows of a ``macro`` file as :class:`MacroRecord` objects."""
    path, header, rows = _read(path)
    col = _check_header(path, header, MACRO_COLUMNS)
    out, seen = [], {}
    for line, r in rows:
        year = _integer(_cell(r, col["year"]), path, line, "year")
        if year in seen:
            raise CsvSchemaError(f"duplicate year {year} at rows {seen[year]} and {line}", path, line)
        seen[year] = line
        out.append(MacroRecord(year, _number(_cell(r, col["gdp"]), path, line, "gdp"),
                               _number(_cell(r, col["inf"]), path, line, "inf")))
    if seen:
        years = sorted(seen)
        gaps = sorted(set(range(years[0], years[-1] + 1)) - set(years))
        if gaps:
            raise CsvSchemaError(f"macro years are not contiguous; missing {gaps}", path)
    return out


def read_panel_csv(path) -> PanelDataset:
    """A prebuilt ``panel`` file: ``entity_id, year`` then series columns."""
    path, header, rows = _read(path)
    col = _check_header(path, header, PANEL_KEYS)
    names = [h for h in header if h not in PANEL_KEYS]
    if any(not n for n in names):
        raise CsvSchemaError("empty column name in header", path, 1)
    ents, years, keys = [], [], []
    data = {n: [] for n in names}
    for line, r in rows:
        entity = _cell(r, col["entity_id"]).strip()
        if not entity:
            raise CsvSchemaError("empty entity_id", path, line, "entity_id")
        year = _integer(_cell(r, col["year"]), path, line, "year")
        ents.append(entity)
        years.append(year)
        keys.append(((entity, year), line))
        for n in names:
            data[n].append(_number(_cell(r, col[n]), path, line, n))
    _check_unique(path, keys)
    if not ents:
        raise CsvSchemaError("no data rows", path)
    return PanelDataset.from_long(ents, years, data)


def ingest_csv(paths, schema: str = "panel") -> PanelDataset:
    """Load a panel from CSV.

    Parameters
    ----------
    paths : path or mapping
        For ``schema="panel"`` a single path.  For ``schema="bank"`` a
        mapping with ``bank`` and ``macro`` paths, or a ``(bank, macro)``
        pair.
    schema : {"panel", "bank"}
    """
    if schema == "panel":
        if isinstance(paths, (str, os.PathLike)):
            return read_panel_csv(paths)
        raise ValueError("the panel schema takes a single path")
    if schema == "bank":
        if isinstance(paths, dict):
            bank, macro = paths["bank"], paths["macro"]
        else:
            bank, macro = paths
        return compute_ratios(read_bank_csv(bank), read_macro_csv(macro))
    raise ValueError(f"unknown schema {schema!r}; expected 'panel' or 'bank'")


def write_panel_csv(panel: PanelDataset, path, names=None) -> None:
    """Write ``panel`` in the ``panel`` schema; values use ``repr`` precision.

    Rows whose every series is missing are skipped, so reading the file back
    gives an equal panel whenever each entity's first and last periods carry
    data.
    """
    names, rows = panel.to_long(names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*PANEL_KEYS, *names])
        for e, p, *vals in rows:
            w.writerow([e, p, *("" if math.isnan(v) else repr(float(v)) for v in vals)])
