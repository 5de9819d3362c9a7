# -*- coding: utf-8 -*-

"""
lob_cusum.diagnostics
=====================
This module provides goodness-of-fit checks based on time rescaling:
compensator residuals between same-stream events, the Kolmogorov-Smirnov
test against the unit exponential, the Ljung-Box test and Q-Q plot data.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.diagnostic import acorr_ljungbox

from .errors import InsufficientData, LobCusumError
from .hawkes import (
    STREAMS,
    HawkesParams,
    IntensityState,
    MarkedEvent,
    compensator_increment,
)

logger = logging.getLogger(__name__)

DEFAULT_LAGS = 20
REPORT_LEVELS = (0.01, 0.025, 0.05)


@dataclass
class ResidualSeries:
    """
    Compensator increments between consecutive events of each stream; the
    first increment of a stream runs from time zero.

    Args:
        a:                  residuals of stream A
        b:                  residuals of stream B
    """

    a: np.ndarray
    b: np.ndarray

    def stream(self, index: int) -> np.ndarray:
        return self.a if index == 0 else self.b

    @property
    def pooled(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])


def residuals(events: Sequence[MarkedEvent], params: HawkesParams) -> ResidualSeries:
    """
    Computes residuals in one pass: the compensator of both streams is
    accumulated over every gap between consecutive events and emitted at each
    event of the stream.

    Args:
        events:             events sorted by time
        params:             model parameters

    Returns:
        `ResidualSeries` instance
    """
    state = IntensityState()
    running = [0.0, 0.0]
    found: Tuple[list, list] = ([], [])
    last = 0.0
    for event in events:
        if event.time < last:
            raise LobCusumError("Events must be sorted by time.")
        for i in (0, 1):
            running[i] += compensator_increment(last, event.time, i, state, params)
        found[event.stream].append(running[event.stream])
        running[event.stream] = 0.0
        state.record(event, params)
        last = event.time
    return ResidualSeries(np.array(found[0]), np.array(found[1]))


def ks_exp1(sample: Sequence[float]) -> Tuple[float, float]:
    """
    One-sample Kolmogorov-Smirnov test against the unit exponential with the
    asymptotic Kolmogorov p-value.

    Args:
        sample:             observations

    Returns:
        tuple of statistic and p-value
    """
    data = np.asarray(sample, dtype=float)
    if data.size == 0:
        raise InsufficientData("KS test requires a non-empty sample.")
    statistic = float(stats.kstest(data, "expon").statistic)
    p_value = float(stats.kstwobign.sf(np.sqrt(data.size) * statistic))
    return statistic, p_value


def ljung_box(sample: Sequence[float], lags: int = DEFAULT_LAGS) -> Tuple[float, float]:
    """
    Ljung-Box portmanteau statistic at lag `lags` with its chi-square
    p-value, as computed by statsmodels.

    Args:
        sample:             observations
        lags:               number of autocorrelations, 20 by default

    Returns:
        tuple of statistic and p-value
    """
    data = np.asarray(sample, dtype=float)
    if not isinstance(lags, int) or lags < 1:
        raise InsufficientData("Invalid value for argument 'lags'. Must be >= 1.")
    n = data.size
    if n <= lags:
        raise InsufficientData(
            f"Ljung-Box with {lags} lags needs more than {lags} points."
        )
    if np.all(data == data[0]):
        raise InsufficientData("Ljung-Box is undefined for a constant sample.")
    result = acorr_ljungbox(data, lags=[lags], return_df=True)
    return float(result["lb_stat"].iloc[-1]), float(result["lb_pvalue"].iloc[-1])


def qq_data(sample: Sequence[float]) -> pd.DataFrame:
    """
    Sample order statistics against unit exponential quantiles at plotting
    positions (k - 0.5) / n.
    """
    data = np.sort(np.asarray(sample, dtype=float))
    if data.size == 0:
        raise InsufficientData("Q-Q data requires a non-empty sample.")
    positions = (np.arange(1, data.size + 1) - 0.5) / data.size
    return pd.DataFrame(
        {"theoretical": stats.expon.ppf(positions), "sample": data}
    )


def _test_entry(statistic: float, p_value: float) -> Dict[str, Any]:
    return {
        "statistic": statistic,
        "p_value": p_value,
        "pass": {str(level): bool(p_value > level) for level in REPORT_LEVELS},
    }


def goodness_of_fit(
    series: ResidualSeries, lags: int = DEFAULT_LAGS
) -> Dict[str, Dict[str, Any]]:
    """
    KS and Ljung-Box results per stream and on pooled residuals, with pass
    flags at the 1%, 2.5% and 5% levels. Streams too short for a test get
    `None` in its place.
    """
    samples = {STREAMS[0]: series.a, STREAMS[1]: series.b, "pooled": series.pooled}
    report: Dict[str, Dict[str, Any]] = {}
    for name, sample in samples.items():
        entry: Dict[str, Any] = {"n": int(sample.size), "ks": None, "ljung_box": None}
        if sample.size:
            entry["ks"] = _test_entry(*ks_exp1(sample))
        try:
            entry["ljung_box"] = _test_entry(*ljung_box(sample, lags))
        except InsufficientData as exc:
            logger.warning(f"Ljung-Box skipped for {name}: {exc}")
        report[name] = entry
    return report
