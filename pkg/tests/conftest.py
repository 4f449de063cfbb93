import numpy as np
import pytest

from waterfall_opt.core import PriceGrid, WaterfallConstraints
from waterfall_opt.search import SearchConfig
from waterfall_opt.valuation import BetaParams, ValuationMatrix


def users(n, prefix="u"):
    return [f"{prefix}{i:05d}" for i in range(n)]


@pytest.fixture
def small_benchmark():
    """Benchmark Betas at desk size: 3,000 users, 8 prices, one instance per network."""
    params = {"N1": BetaParams(1, 6), "N2": BetaParams(2, 6), "N3": BetaParams(10, 5), "N4": BetaParams(6, 1)}
    matrix = ValuationMatrix.homogeneous(users(3000), params, 30.0)
    cfg = SearchConfig(grid=PriceGrid.from_range(2, 30, 4), constraints=WaterfallConstraints(4, 1, True))
    return matrix, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


RAW_SALES_ROWS = """date,hour,ad_network,user_id,impressions,revenue
01/01/2021,19,G,4421AB3,1,0.020
01/01/2021,18,F,345ADB,2,0.022
01/01/2021,21,U,12345AS,1,0.015
01/01/2021,19,G,4421AB3,1,0.019
01/01/2021,18,F,345ADB,2,0.018
01/01/2021,22,U,4421AB3,1,0.015
01/01/2021,20,G,12345AS,3,0.057
"""


@pytest.fixture
def raw_sales_csv():
    """Seven raw sale rows in US date format."""
    return RAW_SALES_ROWS


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines.values()):
            terminalreporter.write_line(line)
