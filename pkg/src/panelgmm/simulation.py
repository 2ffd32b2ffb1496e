"""
Seeded dynamic-panel data generator and Monte Carlo harness.

The generator draws from numpy's PCG64 bit generator; normal variates come
from ``Generator.standard_normal`` (ziggurat).  Replication ``r`` of a
Monte Carlo run is seeded with ``base_seed ^ r``, so each replication is a
pure function of ``(config, base_seed, r)`` and results do not depend on
how replications are scheduled across workers.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from .panel import PanelDataset
from .results import CONST, ModelSpec, lag_name

__all__ = [
    "DgpConfig",
    "simulate_dynamic_panel",
    "monte_carlo",
    "MonteCarloSummary",
    "CoefficientSummary",
    "TestSummary",
    "replication_seed",
    "default_spec",
    "ESTIMATORS",
    "TESTS",
]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of ``y_it = a_i + omega y_{i,t-1} + theta'x_it + e_it``.

    Regressor ``k`` follows ``x_kt = rho_k x_{k,t-1} + loading a_i + u_kt``.
    ``endogeneity_corr`` is the correlation between every ``u_kt`` and
    ``e_it``.  ``e`` may follow an AR(1) (``error_ar1``); with
    ``groupwise_het_factor = f`` the second half of the entities has error
    variance ``f`` times that of the first half.  ``het_index_loading = g``
    scales the error standard deviation by ``exp(g theta'x_it / 2)`` so the
    variance moves with the regression index.
    """

    n_entities: int = 100
    n_periods: int = 7
    burn_in: int = 50
    omega: float = 0.5
    theta: tuple = (1.0,)
    fixed_effect_sd: float = 1.0
    idiosyncratic_sd: float = 1.0
    regressor_persistence: tuple | None = None
    regressor_effect_loading: float = 0.0
    endogeneity_corr: float = 0.0
    groupwise_het_factor: float = 1.0
    error_ar1: float = 0.0
    het_index_loading: float = 0.0
    seed: int = 0
    first_period: int = 1

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in np.atleast_1d(self.theta)))
        rho = self.regressor_persistence
        rho = (0.5,) * len(self.theta) if rho is None else tuple(float(v) for v in np.atleast_1d(rho))
        if len(rho) == 1 and len(self.theta) > 1:
            rho = rho * len(self.theta)
        object.__setattr__(self, "regressor_persistence", rho)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.n_entities < 1:
            problems.append("n_entities must be >= 1")
        if self.n_periods < 1:
            problems.append("n_periods must be >= 1")
        if self.burn_in < 0:
            problems.append("burn_in must be >= 0")
        if not abs(self.omega) < 1:
            problems.append("|omega| must be < 1 for a stationary process")
        if len(self.regressor_persistence) != len(self.theta):
            problems.append("regressor_persistence needs one value per theta entry")
        if any(not abs(r) < 1 for r in self.regressor_persistence):
            problems.append("regressor_persistence values must lie in (-1, 1)")
        if self.fixed_effect_sd < 0:
            problems.append("fixed_effect_sd must be >= 0")
        if not self.idiosyncratic_sd > 0:
            problems.append("idiosyncratic_sd must be > 0")
        if not -1 <= self.endogeneity_corr <= 1:
            problems.append("endogeneity_corr must lie in [-1, 1]")
        if not self.groupwise_het_factor >= 1:
            problems.append("groupwise_het_factor must be >= 1")
        if not abs(self.error_ar1) < 1:
            problems.append("error_ar1 must lie in (-1, 1)")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ValueError("invalid DgpConfig: " + "; ".join(problems))

    @property
    def n_regressors(self) -> int:
        return len(self.theta)

    @property
    def regressor_names(self) -> list:
        return [f"x{k + 1}" for k in range(self.n_regressors)]

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=int(seed) & _SEED_MASK)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta"] = list(self.theta)
        d["regressor_persistence"] = list(self.regressor_persistence)
        return d


def simulate_dynamic_panel(config: DgpConfig, include_truth: bool = False) -> PanelDataset:
    """Draw one balanced panel with series ``y`` and ``x1..xk``.

    Entities are labelled ``e001`` and up; periods start at
    ``config.first_period``.  With ``include_truth`` the fixed effects
    (``alpha``) and idiosyncratic errors (``eps``) are added as series.
    Initial values are drawn from the stationary distribution given
    ``a_i`` (ignoring the regressors) and the first ``burn_in`` periods are
    discarded.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(int(config.seed)))
    N, T, B, K = config.n_entities, config.n_periods, config.burn_in, config.n_regressors
    total = T + B
    alpha = config.fixed_effect_sd * rng.standard_normal(N)
    sd = np.full(N, config.idiosyncratic_sd)
    sd[N // 2:] *= math.sqrt(config.groupwise_het_factor)
    z = rng.standard_normal((N, total))
    u_own = rng.standard_normal((K, N, total))
    c = config.endogeneity_corr
    # unit-variance regressor innovations with corr(u, z) = c
    u = c * z[None] + math.sqrt(1.0 - c * c) * u_own
    rho = np.asarray(config.regressor_persistence)
    x = np.empty((K, N, total))
    x[:, :, 0] = (config.regressor_effect_loading * alpha[None] / (1.0 - rho[:, None])
                  + u[:, :, 0] / np.sqrt(1.0 - rho[:, None] ** 2))
    for t in range(1, total):
        x[:, :, t] = rho[:, None] * x[:, :, t - 1] + config.regressor_effect_loading * alpha[None] + u[:, :, t]

    theta = np.asarray(config.theta)
    index = np.tensordot(theta, x, axes=1)
    innov = sd[:, None] * z
    if config.het_index_loading:
        innov = innov * np.exp(0.5 * config.het_index_loading * index)
    rho_e = config.error_ar1
    eps = np.empty((N, total))
    eps[:, 0] = innov[:, 0] / math.sqrt(1.0 - rho_e ** 2)
    for t in range(1, total):
        eps[:, t] = rho_e * eps[:, t - 1] + innov[:, t]

    w = config.omega
    y = np.empty((N, total))
    y0_sd = np.sqrt(sd ** 2 / (1.0 - rho_e ** 2) / (1.0 - w * w))
    y[:, 0] = alpha / (1.0 - w) + y0_sd * rng.standard_normal(N)
    for t in range(1, total):
        y[:, t] = alpha + w * y[:, t - 1] + index[:, t] + eps[:, t]

    keep = slice(B, total)
    series = {"y": y[:, keep]}
    for k, name in enumerate(config.regressor_names):
        series[name] = x[k][:, keep]
    if include_truth:
        series["alpha"] = np.repeat(alpha[:, None], T, axis=1)
        series["eps"] = eps[:, keep]
    entities = [f"e{i + 1:03d}" for i in range(N)]
    periods = range(config.first_period, config.first_period + T)
    return PanelDataset(entities, periods, series)


# ---------------------------------------------------------------------------
# Monte Carlo


def replication_seed(base_seed: int, r: int) -> int:
    return (int(base_seed) ^ int(r)) & _SEED_MASK


def default_spec(config: DgpConfig, estimator: str) -> ModelSpec:
    """Specification matching the DGP: ``y`` on its first lag (when dynamic) and ``x1..xk``.

    For ``diff_gmm`` the regressors are instrumented by their own
    differences (IV-style), i.e. treated as strictly exogenous.
    """
    from .instruments import InstrumentDirective

    dynamic = config.omega != 0 or estimator == "diff_gmm"
    directives = ()
    if estimator == "diff_gmm":
        directives = tuple(InstrumentDirective("iv", x, 0, True) for x in config.regressor_names)
    return ModelSpec("y", tuple(config.regressor_names), dep_lag_order=1 if dynamic else 0,
                     instrument_directives=directives)


def _estimator_table():
    from . import gmm, static

    return {
        "pols": static.pooled_ols,
        "fe": static.fixed_effects,
        "re": static.random_effects,
        "fgls": static.fgls,
        "diff_gmm": gmm.estimate_one_step,
    }


ESTIMATORS = ("pols", "fe", "re", "fgls", "diff_gmm")


def _test_sargan(panel, spec, res):
    from .gmm import sargan_test
    return sargan_test(res)


def _test_ar(order, panel, spec, res):
    from .gmm import ar_test
    return ar_test(res, order)


def _test_wooldridge(panel, spec, res):
    from .diagnostics import wooldridge_autocorr_test
    return wooldridge_autocorr_test(panel, spec.replace(dep_lag_order=0))


def _test_bp(panel, spec, res):
    from .diagnostics import breusch_pagan_het_test
    from .static import pooled_ols
    return breusch_pagan_het_test(res if res.method == "pols" else pooled_ols(panel, spec))


def _test_modified_wald(panel, spec, res):
    from .diagnostics import modified_wald_groupwise_het
    from .static import fixed_effects
    return modified_wald_groupwise_het(res if res.method == "fe" else fixed_effects(panel, spec))


def _test_bp_lm(panel, spec, res):
    from .diagnostics import bp_lm_re_test
    from .static import pooled_ols
    return bp_lm_re_test(res if res.method == "pols" else pooled_ols(panel, spec))


def _test_hausman(panel, spec, res):
    from .diagnostics import hausman_test
    from .static import fixed_effects, random_effects
    return hausman_test(fixed_effects(panel, spec), random_effects(panel, spec))


def _test_f(panel, spec, res):
    from .static import f_test_pooled_vs_fe, fixed_effects, pooled_ols
    return f_test_pooled_vs_fe(pooled_ols(panel, spec), fixed_effects(panel, spec))


def _test_dwh(which, panel, spec, res):
    from .diagnostics import dwh_endogeneity_test
    x = spec.regressors[0]
    return dwh_endogeneity_test(panel, spec, x, [lag_name(x, 1)])[which]


# partials of module-level functions pickle, so they work with workers > 1


TESTS = {
    "sargan": _test_sargan,
    "ar1": partial(_test_ar, 1),
    "ar2": partial(_test_ar, 2),
    "wooldridge": _test_wooldridge,
    "breusch_pagan": _test_bp,
    "modified_wald": _test_modified_wald,
    "bp_lm": _test_bp_lm,
    "hausman": _test_hausman,
    "f_test": _test_f,
    "durbin": partial(_test_dwh, 0),
    "wu_hausman": partial(_test_dwh, 1),
}


@dataclass
class CoefficientSummary:
    name: str
    true_value: float
    mean_estimate: float
    mean_bias: float
    rmse: float
    coverage: float
    mc_std_error: float


@dataclass
class TestSummary:
    name: str
    level: float
    rejection_rate: float
    n_defined: int


@dataclass
class MonteCarloSummary:
    """Aggregate of a Monte Carlo run.

    ``estimates`` holds one row per successful replication (columns in
    ``per_coefficient`` order); ``failures`` maps replication index to the
    error message.
    """

    estimator: str
    replications: int
    per_coefficient: list
    per_test: list
    failures: dict = field(default_factory=dict)
    estimates: np.ndarray | None = field(default=None, repr=False)
    config: dict = field(default_factory=dict)
    base_seed: int = 0

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    def coefficient(self, name: str) -> CoefficientSummary:
        for c in self.per_coefficient:
            if c.name == name:
                return c
        raise KeyError(name)

    def test(self, name: str) -> TestSummary:
        for t in self.per_test:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "per_coefficient": [asdict(c) for c in self.per_coefficient],
            "per_test": [asdict(t) for t in self.per_test],
            "config": self.config,
        }


def _truth(config: DgpConfig, names) -> dict:
    out = {}
    for n in names:
        if n == lag_name("y", 1):
            out[n] = config.omega
        elif n in config.regressor_names:
            out[n] = config.theta[config.regressor_names.index(n)]
    return out


def _one_replication(args):
    config, estimator, spec, tests, options, r, base_seed, truth = args
    cfg = config.with_seed(replication_seed(base_seed, r))
    try:
        panel = simulate_dynamic_panel(cfg, include_truth=truth)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if callable(estimator):
                res = estimator(panel, spec, **options)
            else:
                res = _estimator_table()[estimator](panel, spec, **options)
            pvals = {}
            for name, fn in tests:
                t = fn(panel, spec, res)
                pvals[name] = t.p_value if t.defined else math.nan
        z = 1.959963984540054
        return r, (list(res.names), res.params.copy(), res.std_errors.copy(), pvals, z), None
    except Exception as exc:  # recorded per replication, never raised
        return r, None, f"{type(exc).__name__}: {exc}"


def monte_carlo(config: DgpConfig, estimator="fe", spec: ModelSpec | None = None,
                replications: int = 100, base_seed: int | None = None, tests=(),
                level: float = 0.05, workers: int = 1,
                estimator_options: dict | None = None,
                include_truth: bool = False) -> MonteCarloSummary:
    """Run ``estimator`` on ``replications`` independently seeded panels.

    Parameters
    ----------
    estimator : str or callable
        One of :data:`ESTIMATORS`, or ``f(panel, spec, **options)`` returning
        an :class:`EstimationResult`.
    spec : ModelSpec, optional
        Defaults to :func:`default_spec`.
    base_seed : int, optional
        Defaults to ``config.seed``.  Replication ``r`` uses ``base_seed ^ r``.
    tests : iterable
        Names from :data:`TESTS` or ``(name, f(panel, spec, result))`` pairs.
    workers : int
        Process count; the summary is identical for any value.
    include_truth : bool
        Add the ``alpha`` and ``eps`` series to every panel, e.g. to plant
        an invalid instrument.

    Returns
    -------
    MonteCarloSummary
        Coverage uses nominal 95% intervals ``b +- 1.96 se``.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    name = estimator if isinstance(estimator, str) else getattr(estimator, "__name__", "custom")
    if isinstance(estimator, str) and estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")
    spec = default_spec(config, name) if spec is None else spec
    base_seed = config.seed if base_seed is None else int(base_seed)
    resolved = []
    for t in tests:
        if isinstance(t, str):
            if t not in TESTS:
                raise ValueError(f"unknown test {t!r}; choose from {', '.join(TESTS)}")
            resolved.append((t, TESTS[t]))
        else:
            resolved.append((str(t[0]), t[1]))
    jobs = [(config, estimator, spec, tuple(resolved), dict(estimator_options or {}), r, base_seed,
             include_truth)
            for r in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_replication, jobs, chunksize=max(1, replications // (4 * workers))))
    else:
        outcomes = [_one_replication(j) for j in jobs]
    outcomes.sort(key=lambda o: o[0])
    return _summarize(name, config, replications, base_seed, outcomes, resolved, level)


def _summarize(name, config, replications, base_seed, outcomes, tests, level) -> MonteCarloSummary:
    failures = {r: err for r, _, err in outcomes if err is not None}
    ok = [payload for _, payload, err in outcomes if err is None]
    per_coef = []
    estimates = None
    if ok:
        names = ok[0][0]
        truth = _truth(config, names)
        est = np.array([p[1] for p in ok])
        se = np.array([p[2] for p in ok])
        z = ok[0][4]
        estimates = est
        for j, n in enumerate(names):
            if n == CONST:
                continue
            tv = truth.get(n, math.nan)
            col = est[:, j]
            mean = math.fsum(col) / col.size
            bias = mean - tv
            rmse = math.sqrt(math.fsum((col - tv) ** 2) / col.size)
            cover = float(np.mean(np.abs(col - tv) <= z * se[:, j])) if not math.isnan(tv) else math.nan
            mcse = float(np.std(col, ddof=1) / math.sqrt(col.size)) if col.size > 1 else math.nan
            per_coef.append(CoefficientSummary(n, tv, mean, bias, rmse, cover, mcse))
    per_test = []
    for tname, _ in tests:
        ps = np.array([p[3][tname] for p in ok], dtype=float)
        good = ps[~np.isnan(ps)]
        rate = float(np.mean(good < level)) if good.size else math.nan
        per_test.append(TestSummary(tname, level, rate, int(good.size)))
    return MonteCarloSummary(name, replications, per_coef, per_test, failures, estimates,
                             config.to_dict(), base_seed)
