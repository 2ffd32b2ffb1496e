"""
Command-line entry point (``panelgmm``).

Every subcommand assembles a :class:`~panelgmm.report.Report` and renders
it as text, json or csv.  Exit codes: 0 clean, 2 invalid input or
arguments, 3 numerical failure in a stage.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import __version__
from . import diagnostics as diag
from .instruments import InstrumentSyntaxError, parse_instrument_spec
from .io import ingest_csv, write_panel_csv
from .panel import correlation_matrix, describe, vif
from .pipeline import (EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, METHODS, TEST_GROUPS, ConfigError,
                       ModelConfig, PipelineConfig, _Stage, load_config, run_pipeline)
from .report import (Report, Section, correlation_table, descriptive_table, monte_carlo_table,
                     render_report, unit_root_table, vif_table)
from .results import ModelSpec
from .simulation import ESTIMATORS, TESTS, DgpConfig, monte_carlo, simulate_dynamic_panel

__all__ = ["main", "build_parser"]


def _list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in _list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--panel", help="prebuilt panel CSV (entity_id, year, series...)")
    g.add_argument("--bank", help="raw bank CSV; needs --macro")
    g.add_argument("--macro", help="macro CSV (year, gdp, inf)")


def _add_output(p):
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    p.add_argument("--out", help="write the report here instead of stdout")


def _add_model(p, methods=True):
    p.add_argument("--dep", required=True, help="dependent variable")
    p.add_argument("--regressors", type=_list, default=[], help="comma-separated regressors")
    p.add_argument("--lags", type=int, default=None,
                   help="lags of the dependent variable (default 1 for gmm, else 0)")
    p.add_argument("--iv", default="", help='standard instruments, e.g. "D.(L2.roa nplr)"')
    p.add_argument("--gmm-iv", default="", help='GMM-style instruments, e.g. "L(1/).L3.llpr"')
    p.add_argument("--depth", default="auto", help="max lags per gmm directive: auto, none or N")
    p.add_argument("--collapse", action="store_true")
    p.add_argument("--robust", action="store_true")
    p.add_argument("--period-fixed", action="store_true", help="period dummies in FE")
    if methods:
        p.add_argument("--method", choices=METHODS, default="pols")


def _add_dgp(p):
    g = p.add_argument_group("data-generating process")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--entities", type=int, default=100)
    g.add_argument("--periods", type=int, default=7)
    g.add_argument("--omega", type=float, default=0.5)
    g.add_argument("--theta", type=_floats, default=(1.0,))
    g.add_argument("--fe-sd", type=float, default=1.0)
    g.add_argument("--sd", type=float, default=1.0, help="idiosyncratic error sd")
    g.add_argument("--burn-in", type=int, default=50)
    g.add_argument("--effect-loading", type=float, default=0.0,
                   help="regressor loading on the entity effect")
    g.add_argument("--endogeneity", type=float, default=0.0)
    g.add_argument("--het-factor", type=float, default=1.0, help="groupwise variance factor")
    g.add_argument("--error-ar1", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panelgmm", description="Dynamic panel estimation toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, hlp in (("describe", "descriptive statistics"), ("correlate", "correlation matrix"),
                      ("vif", "variance inflation factors")):
        p = sub.add_parser(name, help=hlp)
        _add_input(p)
        p.add_argument("--vars", type=_list, required=True, help="comma-separated series")
        _add_output(p)

    p = sub.add_parser("unitroot", help="Fisher-type ADF panel unit-root tests")
    _add_input(p)
    p.add_argument("--vars", type=_list, required=True)
    p.add_argument("--adf-lags", type=int, default=1)
    p.add_argument("--trend", action="store_true", help="constant and trend")
    p.add_argument("--policy", choices=diag.POLICIES, default="all")
    p.add_argument("--asymptotic", action="store_true", help="asymptotic MacKinnon p-values")
    _add_output(p)

    p = sub.add_parser("estimate", help="fit one estimator")
    _add_input(p)
    _add_model(p)
    p.add_argument("--error-model", default="groupwise_het", help="FGLS error model")
    _add_output(p)

    p = sub.add_parser("test", help="specification and assumption tests")
    _add_input(p)
    _add_model(p, methods=False)
    p.add_argument("--tests", type=_list,
                   default=["specification", "autocorrelation", "heteroskedasticity", "endogeneity"],
                   help=f"comma list of {', '.join(TEST_GROUPS)}")
    _add_output(p)

    p = sub.add_parser("gmm", help="one-step difference GMM with validity tests")
    _add_input(p)
    _add_model(p, methods=False)
    p.add_argument("--diff-sargan", type=_list, default=["iv", "gmm"],
                   help="instrument subsets for difference-in-Sargan")
    _add_output(p)

    p = sub.add_parser("simulate", help="simulate a dynamic panel to CSV")
    _add_dgp(p)
    p.add_argument("--out", required=True, help="output panel CSV")

    p = sub.add_parser("mc", help="Monte Carlo bias and rejection rates")
    _add_dgp(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--estimator", choices=ESTIMATORS, default="fe")
    p.add_argument("--tests", type=_list, default=[], help=f"comma list of {', '.join(TESTS)}")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    _add_output(p)

    p = sub.add_parser("pipeline", help="run the full cascade from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("text", "json", "csv"), default=None,
                   help="overrides [output] format")
    p.add_argument("--out")
    return ap


# ---------------------------------------------------------------------------


def _panel(args):
    if args.panel:
        if args.bank or args.macro:
            raise ConfigError("give either --panel or --bank/--macro, not both")
        return ingest_csv(args.panel, "panel")
    if args.bank and args.macro:
        return ingest_csv({"bank": args.bank, "macro": args.macro}, "bank")
    raise ConfigError("input required: --panel, or --bank with --macro")


def _check_series(panel, names):
    missing = [v for v in names if v not in panel]
    if missing:
        raise ConfigError(f"unknown series {missing}; available: {list(panel.series_names)}")


def _model_config(args, method_list, diff_sargan=("iv", "gmm")) -> ModelConfig:
    directives = []
    for text, style in ((args.iv, None), (args.gmm_iv, "gmm")):
        if text.strip():
            directives += parse_instrument_spec(text, style=style)
    depth = args.depth
    if depth == "none":
        depth = None
    elif depth != "auto":
        try:
            depth = int(depth)
        except ValueError:
            raise ConfigError("--depth must be auto, none or an integer") from None
    lags = args.lags if args.lags is not None else (1 if "gmm" in method_list else 0)
    spec = ModelSpec(args.dep, tuple(args.regressors), dep_lag_order=lags,
                     instrument_directives=tuple(directives))
    return ModelConfig(name=args.dep, spec=spec, methods=tuple(method_list), static_lags=lags,
                       max_gmm_lag_depth=depth, collapse=args.collapse, robust=args.robust,
                       period_fixed=args.period_fixed,
                       fgls_error_model=getattr(args, "error_model", "groupwise_het"),
                       diff_sargan=tuple(diff_sargan))


def _pipeline_report(args, methods, tests, diff_sargan=("iv", "gmm")) -> Report:
    model = _model_config(args, methods, diff_sargan)
    panel = _panel(args)
    cfg = PipelineConfig(models=[model], panel_path=args.panel or "<cli>", tests=tuple(tests),
                         title=f"panelgmm {args.command}")
    return run_pipeline(cfg, panel=panel)


def _single(title, key, fn, table_fn, *a, **kw) -> Report:
    rep = Report(title)
    st = _Stage(rep, key, title)
    res = st.run(fn, *a, **kw)
    if res is not None:
        tables = table_fn(res)
        st.section.tables.extend(tables if isinstance(tables, list) else [tables])
    return rep


def _dgp(args) -> DgpConfig:
    cfg = DgpConfig(n_entities=args.entities, n_periods=args.periods, burn_in=args.burn_in,
                    omega=args.omega, theta=tuple(args.theta), fixed_effect_sd=args.fe_sd,
                    idiosyncratic_sd=args.sd, regressor_effect_loading=args.effect_loading,
                    endogeneity_corr=args.endogeneity, groupwise_het_factor=args.het_factor,
                    error_ar1=args.error_ar1, seed=args.seed)
    cfg.validate()
    return cfg


def _run(args) -> tuple[Report | None, str | None]:
    cmd = args.command
    if cmd == "pipeline":
        cfg = load_config(args.config)
        return run_pipeline(cfg), args.format or cfg.output_format
    if cmd in ("describe", "correlate", "vif"):
        panel = _panel(args)
        _check_series(panel, args.vars)
        if cmd == "describe":
            return _single("Descriptive statistics", "describe", describe, descriptive_table,
                           panel, args.vars), None
        if cmd == "correlate":
            return _single("Correlation matrix", "correlation", correlation_matrix,
                           correlation_table, panel, args.vars), None
        return _single("Variance inflation factors", "vif", vif, vif_table, panel, args.vars), None
    if cmd == "unitroot":
        panel = _panel(args)
        _check_series(panel, args.vars)
        rep = Report("Panel unit-root tests")
        st = _Stage(rep, "unitroot", "Fisher-type ADF tests")
        det = "constant_trend" if args.trend else "constant"
        out = [st.run(diag.fisher_unit_root, panel, v, lags=args.adf_lags, deterministic=det,
                      policy=args.policy, finite_sample=not args.asymptotic) for v in args.vars]
        out = [r for r in out if r is not None]
        if out:
            st.section.tables.append(unit_root_table(out))
        return rep, None
    if cmd == "estimate":
        return _pipeline_report(args, [args.method], ()), None
    if cmd == "test":
        bad = [t for t in args.tests if t not in TEST_GROUPS]
        if bad:
            raise ConfigError(f"unknown test group(s) {bad}; choose from {', '.join(TEST_GROUPS)}")
        return _pipeline_report(args, [], args.tests), None
    if cmd == "gmm":
        return _pipeline_report(args, ["gmm"], ("diff_sargan",), args.diff_sargan), None
    if cmd == "simulate":
        panel = simulate_dynamic_panel(_dgp(args))
        write_panel_csv(panel, args.out)
        return None, None
    if cmd == "mc":
        unknown = [t for t in args.tests if t not in TESTS]
        if unknown:
            raise ConfigError(f"unknown test(s) {unknown}; choose from {', '.join(TESTS)}")
        if args.reps < 1:
            raise ConfigError("--reps must be positive")
        summary = monte_carlo(_dgp(args), estimator=args.estimator, replications=args.reps,
                              base_seed=args.seed, tests=tuple(args.tests), level=args.level,
                              workers=args.workers)
        rep = Report(f"Monte Carlo ({summary.estimator})")
        rep.sections.append(Section("mc", "Monte Carlo summary", tables=monte_carlo_table(summary)))
        return rep, None
    raise ConfigError(f"unknown command {cmd!r}")  # pragma: no cover


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report, fmt = _run(args)
    except (ConfigError, InstrumentSyntaxError, OSError, ValueError) as exc:
        print(f"panelgmm: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if report is None:
        return EXIT_OK
    text = render_report(report, fmt or getattr(args, "format", "text") or "text")
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for err in report.errors:
        print(f"panelgmm: {err}", file=sys.stderr)
    if report.exit_code not in (EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL):
        return EXIT_NUMERICAL
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
