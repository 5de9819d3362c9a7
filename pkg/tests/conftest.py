# -*- coding: utf-8 -*-

from typing import List

import numpy as np
import pytest
from scipy.optimize import OptimizeResult

from lob_cusum.hawkes import HawkesParams, MarkedEvent
from lob_cusum.ingest import Aggressor, BookSnapshot, TradePrint


BOOK_ROWS = """ts_ns,side,level,price_ticks,size
1000,B,1,100,10
1000,B,2,99,20
1000,B,3,98,30
1000,A,1,101,5
1000,A,2,102,15
1000,A,3,103,25
2000,B,1,100,10
2000,B,2,99,20
2000,A,1,101,8
2000,A,2,102,12
"""

TRADE_ROWS = """ts_ns,price_ticks,size,aggressor
1500,101,5,B
1500,102,3,B
1600,100,4,S
2500,101,8,B
2500,102,12,B
2500,100,30,S
"""


class MockStalledMinimize:
    """Simulates an optimizer exhausting its iteration budget"""

    def __init__(self, fun, x0, *args, **kwargs) -> None:
        self.fun = fun
        self.x0 = np.asarray(x0, dtype=float)
        self.max_iters = kwargs["options"]["maxiter"]

    def result(self) -> OptimizeResult:
        return OptimizeResult(
            x=self.x0,
            fun=self.fun(self.x0),
            jac=np.ones_like(self.x0),
            nit=self.max_iters,
            success=False,
            message="STOP: TOTAL NO. OF ITERATIONS REACHED LIMIT",
        )


@pytest.fixture
def book_csv(tmp_path):
    path = tmp_path / "book.csv"
    path.write_text(BOOK_ROWS)
    return str(path)


@pytest.fixture
def trades_csv(tmp_path):
    path = tmp_path / "trades.csv"
    path.write_text(TRADE_ROWS)
    return str(path)


@pytest.fixture
def write_csv(tmp_path):
    """Writes text to a CSV file under tmp_path and returns its path"""

    def _write(text: str, name: str = "input.csv") -> str:
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return _write


@pytest.fixture
def snapshot() -> BookSnapshot:
    return BookSnapshot(
        timestamp=1000,
        bids=((100, 10), (99, 20), (98, 30)),
        asks=((101, 5), (102, 15), (103, 25)),
    )


@pytest.fixture
def buy_prints() -> List[TradePrint]:
    return [
        TradePrint(1500, 101, 5, Aggressor.BUY),
        TradePrint(1500, 102, 3, Aggressor.BUY),
    ]


@pytest.fixture
def hawkes_params() -> HawkesParams:
    return HawkesParams.constant(
        mu=[0.4, 0.3],
        alpha=[[0.5, 0.2], [0.1, 0.4]],
        beta=[[1.5, 1.0], [1.2, 2.0]],
        horizon=500.0,
        mark_rate=[0.01, 0.02],
        n_bins=1,
    )


@pytest.fixture
def poisson_params() -> HawkesParams:
    return HawkesParams.constant(
        mu=[0.5, 0.5], alpha=0.0, beta=1.0, horizon=200.0, n_bins=1
    )


@pytest.fixture
def small_path() -> List[MarkedEvent]:
    return [
        MarkedEvent(0.5, 0, 100.0),
        MarkedEvent(1.0, 1, 50.0),
        MarkedEvent(1.0, 0, 80.0, depth=2),
        MarkedEvent(2.5, 1, 120.0),
        MarkedEvent(4.0, 0, 60.0, depth=3),
    ]


@pytest.fixture
def mock_stalled_minimize(monkeypatch):
    def stalled(fun, x0, *args, **kwargs):
        return MockStalledMinimize(fun, x0, *args, **kwargs).result()

    monkeypatch.setattr("lob_cusum.hawkes.minimize", stalled)
