from datetime import date, timedelta

import numpy as np
import pytest

from stockcast.market_data import PricePanel


def weekdays(n: int, start: date = date(2021, 1, 4)) -> list[date]:
    out = []
    day = start
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += timedelta(days=1)
    return out


def make_panel(close: np.ndarray, tickers=None, start: date = date(2021, 1, 4)) -> PricePanel:
    close = np.asarray(close, dtype=np.float64)
    if tickers is None:
        tickers = [f"S{j}" for j in range(close.shape[1])]
    return PricePanel(tickers=list(tickers), dates=weekdays(close.shape[0], start), close=close)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
