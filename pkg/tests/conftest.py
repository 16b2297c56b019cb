import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrpccd.market_data import PricePanel

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_panel(close, spread=0.01, start="2020-01-01", assets=None):
    """Panel with open = previous close and a symmetric high/low envelope."""
    close = np.asarray(close, dtype=float)
    if close.ndim == 1:
        close = close[:, None]
    t, n = close.shape
    open_ = np.vstack([close[:1], close[:-1]])
    high = np.maximum(open_, close) * (1 + spread)
    low = np.minimum(open_, close) * (1 - spread)
    dates = np.datetime64(start, "D") + np.arange(t)
    assets = assets or tuple(f"X{j}" for j in range(n))
    return PricePanel(assets, dates, open_, high, low, close, np.ones((t, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Store one acceptance verdict; all of them are printed at the end of the run."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
