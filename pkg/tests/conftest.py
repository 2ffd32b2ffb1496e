import numpy as np
import pytest

from panelgmm.panel import PanelDataset
from panelgmm.simulation import DgpConfig, simulate_dynamic_panel


def random_panel(rng, n_entities, n_periods, names, missing=0.0, first_period=2008):
    data = {n: rng.normal(size=(n_entities, n_periods)) for n in names}
    if missing:
        for n in names:
            mask = rng.random((n_entities, n_periods)) < missing
            data[n][mask] = np.nan
    return PanelDataset([f"e{i:03d}" for i in range(n_entities)],
                        range(first_period, first_period + n_periods), data)


def static_panel(rng, n_entities=30, n_periods=6, k=2, fe_sd=1.0, corr=0.0, sd=1.0, beta=None):
    """y = a_i + X b + e; ``corr`` loads the regressors on a_i."""
    beta = np.arange(1, k + 1, dtype=float) if beta is None else np.asarray(beta, float)
    a = rng.normal(scale=fe_sd, size=(n_entities, 1))
    xs = {f"x{j + 1}": rng.normal(size=(n_entities, n_periods)) + corr * a for j in range(k)}
    y = a + sum(b * xs[f"x{j + 1}"] for j, b in enumerate(beta))
    y = y + rng.normal(scale=sd, size=(n_entities, n_periods))
    return PanelDataset([f"e{i:03d}" for i in range(n_entities)], range(1, n_periods + 1),
                        {"y": y, **xs})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dyn_panel():
    return simulate_dynamic_panel(DgpConfig(n_entities=40, n_periods=8, theta=(1.0, -0.5), seed=7))


# acceptance criteria record one summary line each; printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
