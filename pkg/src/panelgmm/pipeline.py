"""
Configuration loading and the full estimation cascade.

Configuration is an INI file::

    [input]
    panel = banks.csv            ; or: bank = raw.csv / macro = macro.csv

    [output]
    format = text                ; text | json | csv

    [options]
    tests = all                  ; or a comma list of TEST_GROUPS, or empty
    seed = 20240101

    [model:ROA]
    dependent = ROA
    regressors = SIZE, NPLR, LLPR, CAR, GDP, INF
    lags = 1
    methods = pols, fe, re, fgls, gmm
    iv = "D.(L2.ROA L3.GDP L.INF L.SIZE NPLR)"
    gmm_iv = "L(1/).L3.LLPR"

Each ``[model:NAME]`` section is one specification; models run in file
order.
"""
from __future__ import annotations

import configparser
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import gmm as gmm_mod
from . import static
from ._linalg import RankDeficientError
from .instruments import InstrumentError, InstrumentSyntaxError, parse_instrument_spec
from .io import ingest_csv
from .panel import PanelDataset, correlation_matrix, describe, regulatory_flags, vif
from .report import (Cell, Report, Section, correlation_table, descriptive_table,
                     estimation_table, gmm_table, test_table, unit_root_table, vif_table)
from .results import ModelSpec, TestResult, lag_name

__all__ = [
    "ConfigError",
    "ModelConfig",
    "PipelineConfig",
    "load_config",
    "parse_config",
    "run_pipeline",
    "specification_decision",
    "METHODS",
    "TEST_GROUPS",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_NUMERICAL",
]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

METHODS = ("pols", "fe", "re", "fgls", "gmm")
TEST_GROUPS = ("describe", "correlation", "vif", "unitroot", "specification", "autocorrelation",
               "heteroskedasticity", "endogeneity", "diff_sargan")
FORMATS = ("text", "json", "csv")
SPEC_LEVEL = 0.01


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    name: str
    spec: ModelSpec
    methods: tuple = METHODS
    static_lags: int = 0
    max_gmm_lag_depth: object = "auto"
    collapse: bool = False
    robust: bool = False
    period_fixed: bool = False
    fgls_error_model: str = "groupwise_het"
    endogeneity_instruments: tuple | None = None
    diff_sargan: tuple = ("iv", "gmm")
    unitroot_lags: int = 1


@dataclass
class PipelineConfig:
    models: list
    panel_path: str | None = None
    bank_path: str | None = None
    macro_path: str | None = None
    output_format: str = "text"
    tests: tuple = TEST_GROUPS
    levels: tuple = (0.01, 0.05, 0.10)
    seed: int = 0
    unitroot_policy: str = "all"
    title: str = "Dynamic panel estimation report"

    def __post_init__(self):
        if not self.models:
            raise ConfigError("at least one [model:NAME] section is required")
        if self.panel_path is None and (self.bank_path is None or self.macro_path is None):
            raise ConfigError("[input] needs 'panel', or both 'bank' and 'macro'")
        if self.output_format not in FORMATS:
            raise ConfigError(f"unknown output format {self.output_format!r}; expected {FORMATS}")
        bad = [t for t in self.tests if t not in TEST_GROUPS]
        if bad:
            raise ConfigError(f"unknown test group(s) {bad}; choose from {', '.join(TEST_GROUPS)}")
        if self.unitroot_policy not in diag.POLICIES:
            raise ConfigError(f"unknown unit-root policy {self.unitroot_policy!r}")


def _split(text: str) -> list:
    return [x.strip() for x in text.replace(";", ",").split(",") if x.strip()]


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _bool(section, key, default=False) -> bool:
    try:
        return section.getboolean(key, fallback=default)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be true/false") from None


def _int(section, key, default) -> int:
    try:
        return section.getint(key, fallback=default)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be an integer") from None


def _model(name: str, sec) -> ModelConfig:
    if "dependent" not in sec:
        raise ConfigError(f"[model:{name}] needs 'dependent'")
    directives = []
    for key, style in (("iv", None), ("gmm_iv", "gmm")):
        text = _unquote(sec.get(key, ""))
        if text:
            try:
                directives += parse_instrument_spec(text, style=style)
            except InstrumentSyntaxError as exc:
                raise ConfigError(f"[model:{name}] {key}: {exc}") from None
    methods = tuple(_split(sec.get("methods", ",".join(METHODS))))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"[model:{name}] unknown method(s) {bad}; choose from {METHODS}")
    depth = sec.get("max_gmm_lag_depth", "auto").strip()
    if depth not in ("auto", "none", ""):
        try:
            depth = int(depth)
        except ValueError:
            raise ConfigError(f"[model:{name}] max_gmm_lag_depth must be auto, none or an integer") from None
    else:
        depth = None if depth == "none" else "auto"
    try:
        spec = ModelSpec(sec["dependent"].strip(), tuple(_split(sec.get("regressors", ""))),
                         dep_lag_order=_int(sec, "lags", 1),
                         include_intercept=_bool(sec, "intercept", True),
                         instrument_directives=tuple(directives))
    except ValueError as exc:
        raise ConfigError(f"[model:{name}] {exc}") from None
    endo = sec.get("endogeneity_instruments")
    return ModelConfig(
        name=name, spec=spec, methods=methods, static_lags=_int(sec, "static_lags", 0),
        max_gmm_lag_depth=depth, collapse=_bool(sec, "collapse"), robust=_bool(sec, "robust"),
        period_fixed=_bool(sec, "period_fixed"),
        fgls_error_model=sec.get("fgls_error_model", "groupwise_het").strip(),
        endogeneity_instruments=None if endo is None else tuple(_split(_unquote(endo))),
        diff_sargan=tuple(_split(sec.get("diff_sargan", "iv, gmm"))),
        unitroot_lags=_int(sec, "unitroot_lags", 1),
    )


def parse_config(text: str, base_dir=None) -> PipelineConfig:
    """Parse INI text; relative input paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    inp = cp["input"] if cp.has_section("input") else {}
    base = Path(base_dir) if base_dir is not None else None

    def path(key):
        v = inp.get(key)
        if v is None or not v.strip():
            return None
        p = Path(_unquote(v))
        return str(base / p if base is not None and not p.is_absolute() else p)

    out = cp["output"] if cp.has_section("output") else {}
    opts = cp["options"] if cp.has_section("options") else None
    tests = TEST_GROUPS
    levels = (0.01, 0.05, 0.10)
    seed, policy = 0, "all"
    title = "Dynamic panel estimation report"
    if opts is not None:
        if "tests" in opts:
            raw = opts["tests"].strip()
            tests = TEST_GROUPS if raw == "all" else tuple(_split(raw))
        if "levels" in opts:
            try:
                levels = tuple(float(x) for x in _split(opts["levels"]))
            except ValueError:
                raise ConfigError("[options] levels must be numbers") from None
        seed = _int(opts, "seed", 0)
        policy = opts.get("unitroot_policy", "all").strip()
        title = opts.get("title", title).strip()
    models = [_model(s.split(":", 1)[1].strip(), cp[s]) for s in cp.sections()
              if s.startswith("model:")]
    return PipelineConfig(models=models, panel_path=path("panel"), bank_path=path("bank"),
                          macro_path=path("macro"),
                          output_format=out.get("format", "text").strip(), tests=tests,
                          levels=levels, seed=seed, unitroot_policy=policy, title=title)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# decision logic


def specification_decision(f_test: TestResult | None, bp_lm: TestResult | None,
                           hausman: TestResult | None, level: float = SPEC_LEVEL) -> str:
    """Choose among pooled OLS, fixed and random effects.

    The F-test (pooled vs FE) and the BP-LM test (pooled vs RE) decide at
    ``level``.  When both reject, the Hausman test arbitrates: rejection
    means "Fixed Effect", otherwise "Random Effect".
    """
    f_rej = f_test is not None and f_test.defined and f_test.p_value < level
    lm_rej = bp_lm is not None and bp_lm.defined and bp_lm.p_value < level
    if f_rej and lm_rej:
        if hausman is None or not hausman.defined:
            return "Fixed Effect"
        return "Fixed Effect" if hausman.p_value < level else "Random Effect"
    if f_rej:
        return "Fixed Effect"
    if lm_rej:
        return "Random Effect"
    return "Pooled OLS"


# ---------------------------------------------------------------------------
# cascade


class _Stage:
    """Runs one stage, recording errors and warnings in a section."""

    def __init__(self, report: Report, key: str, title: str):
        self.section = Section(key, title)
        self.report = report
        report.sections.append(self.section)

    def run(self, fn, *args, **kwargs):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                out = fn(*args, **kwargs)
            except _NotComputable as exc:
                raise InstrumentError(str(exc)) from None
            except (KeyError, InstrumentError) as exc:
                self.fail(exc, EXIT_VALIDATION)
                out = None
            except (ValueError, ArithmeticError, np.linalg.LinAlgError, RankDeficientError) as exc:
                self.fail(exc, EXIT_NUMERICAL)
                out = None
        for w in caught:
            msg = str(w.message)
            if msg not in self.section.notes:
                self.section.notes.append(msg)
        return out

    def fail(self, exc, code):
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        self.section.error = f"{type(exc).__name__}: {msg}"
        self.report.errors.append(f"{self.section.key}: {self.section.error}")
        self.report.exit_code = max(self.report.exit_code, code)

    def skip(self, reason: str):
        self.section.skipped = True
        self.section.notes.append(f"skipped: {reason}")


def _diff_sargan(panel, result, subset):
    try:
        return gmm_mod.difference_in_sargan(panel, result, subset)
    except InstrumentError as exc:
        raise _NotComputable(str(exc)) from None


class _NotComputable(Exception):
    pass


def _load_panel(cfg: PipelineConfig) -> PanelDataset:
    if cfg.panel_path is not None:
        return ingest_csv(cfg.panel_path, "panel")
    return ingest_csv({"bank": cfg.bank_path, "macro": cfg.macro_path}, "bank")


def run_pipeline(cfg: PipelineConfig, panel: PanelDataset | None = None) -> Report:
    """Run the cascade for every model and assemble the report.

    Stage errors are recorded in their section and the stages that need
    the failed result are skipped.  ``report.exit_code`` is 0 when clean,
    2 for invalid inputs and 3 when a numerical stage failed.
    """
    report = Report(cfg.title)
    if panel is None:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                panel = _load_panel(cfg)
        except (OSError, ValueError) as exc:
            report.errors.append(f"input: {type(exc).__name__}: {exc}")
            report.exit_code = EXIT_VALIDATION
            report.sections.append(Section("input", "Input", error=str(exc)))
            return report
        if caught or panel.diagnostics:
            notes = list(dict.fromkeys([*panel.diagnostics, *(str(w.message) for w in caught)]))
            report.sections.append(Section("input", "Input", notes=notes))
    missing = sorted({v for m in cfg.models for v in m.spec.variables if v not in panel})
    if missing:
        msg = f"unknown series {missing}; available: {list(panel.series_names)}"
        report.errors.append(f"input: {msg}")
        report.exit_code = EXIT_VALIDATION
        report.sections.append(Section("input", "Input", error=msg))
        return report
    for m in cfg.models:
        _run_model(report, cfg, m, panel)
    return report


def _run_model(report: Report, cfg: PipelineConfig, m: ModelConfig, panel: PanelDataset) -> None:
    tests = set(cfg.tests)
    spec = m.spec
    static_spec = spec.replace(dep_lag_order=m.static_lags, instrument_directives=())
    variables = [spec.dependent, *spec.regressors]
    key = m.name

    if "describe" in tests:
        st = _Stage(report, f"{key}.describe", f"{key}: descriptive statistics")
        rows = st.run(describe, panel, variables)
        if rows is not None:
            st.section.tables.append(descriptive_table(rows))
            flags = st.run(regulatory_flags, panel)
            st.section.notes += [f.message for f in flags or []]

    if "correlation" in tests:
        st = _Stage(report, f"{key}.correlation", f"{key}: correlation screening")
        res = st.run(correlation_matrix, panel, variables)
        if res is not None:
            st.section.tables.append(correlation_table(res))

    if "vif" in tests and len(spec.regressors) >= 2:
        st = _Stage(report, f"{key}.vif", f"{key}: variance inflation factors")
        res = st.run(vif, panel, list(spec.regressors))
        if res is not None:
            st.section.tables.append(vif_table(res))

    if "unitroot" in tests:
        st = _Stage(report, f"{key}.unitroot", f"{key}: panel unit-root tests")
        reps = []
        for v in variables:
            r = st.run(diag.fisher_unit_root, panel, v, lags=m.unitroot_lags,
                       policy=cfg.unitroot_policy)
            if r is not None:
                reps.append(r)
            if st.section.error:
                break
        if reps:
            st.section.tables.append(unit_root_table(reps))

    fits = {}
    st = _Stage(report, f"{key}.static", f"{key}: pooled OLS, fixed and random effects")
    wanted = [x for x in ("pols", "fe", "re") if x in m.methods]
    need = set(wanted)
    if "specification" in tests:
        need |= {"pols", "fe", "re"}
    if tests & {"autocorrelation", "heteroskedasticity"}:
        need |= {"pols", "fe"}
    runners = {"pols": lambda: static.pooled_ols(panel, static_spec),
               "fe": lambda: static.fixed_effects(panel, static_spec, period_fixed=m.period_fixed),
               "re": lambda: static.random_effects(panel, static_spec)}
    for name in ("pols", "fe", "re"):
        if name in need:
            r = st.run(runners[name])
            if r is not None:
                fits[name] = r
    labels = {"pols": "Pooled OLS", "fe": "FEM", "re": "REM"}
    shown = {labels[k]: fits[k] for k in wanted if k in fits}
    if shown:
        st.section.tables.append(estimation_table(f"{key}: static panel estimates", shown))
    if not need:
        report.sections.remove(st.section)

    if "specification" in tests:
        sp = _Stage(report, f"{key}.specification", f"{key}: specification tests")
        f = lm = h = None
        if "pols" in fits and "fe" in fits:
            f = sp.run(static.f_test_pooled_vs_fe, fits["pols"], fits["fe"], level=SPEC_LEVEL)
        else:
            sp.section.notes.append("F-test skipped: pooled OLS or FE failed")
        if "pols" in fits:
            lm = sp.run(diag.bp_lm_re_test, fits["pols"], level=SPEC_LEVEL)
        else:
            sp.section.notes.append("BP-LM test skipped: pooled OLS failed")
        if "fe" in fits and "re" in fits:
            h = sp.run(diag.hausman_test, fits["fe"], fits["re"], level=SPEC_LEVEL)
        else:
            sp.section.notes.append("Hausman test skipped: FE or RE failed")
        rows = [(lbl, t) for lbl, t in (("F-test (POLS vs FEM)", f), ("BP-LM (POLS vs REM)", lm),
                                        ("Hausman (FEM vs REM)", h)) if t is not None]
        if rows:
            table = test_table(f"{key}: specification tests", rows)
            decision = specification_decision(f, lm, h)
            table.add("Result", [Cell("", "text")] * 4 + [Cell(decision, "text")])
            table.notes.append(f"decisions at the {SPEC_LEVEL:g} level")
            sp.section.tables.append(table)

    if "autocorrelation" in tests:
        sa = _Stage(report, f"{key}.autocorrelation", f"{key}: autocorrelation")
        w = sa.run(diag.wooldridge_autocorr_test, panel, static_spec)
        if w is not None:
            sa.section.tables.append(test_table(f"{key}: Wooldridge test", [("Wooldridge", w)]))

    if "heteroskedasticity" in tests:
        sh = _Stage(report, f"{key}.heteroskedasticity", f"{key}: heteroskedasticity")
        rows = []
        if "pols" in fits:
            bp = sh.run(diag.breusch_pagan_het_test, fits["pols"])
            if bp is not None:
                rows.append(("Breusch-Pagan (POLS)", bp))
            lm = sh.run(diag.bp_lm_re_test, fits["pols"])
            if lm is not None:
                rows.append(("BP Lagrangian multiplier (REM)", lm))
        else:
            sh.section.notes.append("Breusch-Pagan tests skipped: pooled OLS failed")
        if "fe" in fits:
            mw = sh.run(diag.modified_wald_groupwise_het, fits["fe"])
            if mw is not None:
                rows.append(("Modified Wald (FEM)", mw))
        else:
            sh.section.notes.append("modified Wald test skipped: FE failed")
        if rows:
            sh.section.tables.append(test_table(f"{key}: heteroskedasticity tests", rows))

    if "fgls" in m.methods:
        sf = _Stage(report, f"{key}.fgls", f"{key}: FGLS")
        r = sf.run(static.fgls, panel, static_spec, error_model=m.fgls_error_model)
        if r is not None:
            sf.section.tables.append(estimation_table(f"{key}: FGLS estimates", {"FGLS": r}))
            if not r.auxiliary["converged"]:
                sf.section.notes.append("FGLS did not converge")

    if "endogeneity" in tests:
        se = _Stage(report, f"{key}.endogeneity", f"{key}: Durbin-Wu-Hausman endogeneity tests")
        rows = []
        for x in static_spec.regressors:
            inst = list(m.endogeneity_instruments) if m.endogeneity_instruments else [lag_name(x, 1)]
            inst = [z for z in inst if z != x]
            pair = se.run(diag.dwh_endogeneity_test, panel, static_spec, x, inst)
            if pair is not None:
                rows += [(f"{x}: Durbin", pair[0]), (f"{x}: Wu-Hausman", pair[1])]
            if se.section.error:
                se.section.notes.append(f"stopped at regressor {x}")
                break
        if rows:
            se.section.tables.append(test_table(f"{key}: endogeneity tests", rows))

    if "gmm" in m.methods:
        sg = _Stage(report, f"{key}.gmm", f"{key}: one-step difference GMM")
        r = sg.run(gmm_mod.estimate_one_step, panel, spec, robust=m.robust,
                   max_gmm_lag_depth=m.max_gmm_lag_depth, collapse=m.collapse)
        if r is None:
            return
        diffs = {}
        if "diff_sargan" in tests:
            for sel in m.diff_sargan:
                # an exclusion that under-identifies the model is reported, not fatal
                try:
                    pair = sg.run(_diff_sargan, panel, r, sel)
                except InstrumentError as exc:
                    sg.section.notes.append(f"difference-in-Sargan for {sel!r} not computable: {exc}")
                    continue
                if pair is not None:
                    diffs[sel] = pair
        sg.section.tables.append(gmm_table(f"{key}: difference GMM", {m.name: r}, {m.name: diffs}))
