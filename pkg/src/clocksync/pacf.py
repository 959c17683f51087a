"""Sample partial autocorrelation and lag selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class PacfResult:
    values: np.ndarray
    confidence: float
    selected_lag: int


def autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased (divide by n) sample autocovariance of the demeaned series, lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = len(x)
    return np.array([np.dot(x[: n - k], x[k:]) / n for k in range(max_lag + 1)])


def durbin_levinson(gamma: np.ndarray) -> np.ndarray:
    """Partial autocorrelations phi_kk for k = 0..len(gamma)-1 from autocovariances."""
    max_lag = len(gamma) - 1
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0 or gamma[0] == 0:
        return out
    phi = np.zeros(max_lag + 1)
    v = gamma[0]
    for k in range(1, max_lag + 1):
        num = gamma[k] - np.dot(phi[1:k], gamma[k - 1:0:-1])
        a = num / v
        prev = phi[1:k].copy()
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = a
        v *= 1.0 - a * a
        out[k] = a
        if v <= 0:
            break
    return out


def select_lag(values: np.ndarray, confidence: float) -> int:
    """Last lag of the leading run of significant partial autocorrelations.

    The returned ``L`` is the lag just before the first lag (from 1 up) that
    falls inside ``+/- confidence``; isolated significant values beyond that
    cutoff are treated as chance crossings.
    """
    for k in range(1, len(values)):
        if abs(values[k]) <= confidence:
            return k - 1
    return len(values) - 1


def pacf(series, max_lag: int = 25) -> PacfResult:
    """Sample PACF with the +/-1.96/sqrt(n) white-noise band and the selected lag."""
    x = np.asarray(series, dtype=float)
    if max_lag < 1:
        raise InvalidArgument("max_lag must be >= 1")
    if x.ndim != 1 or len(x) <= 3 * max_lag:
        raise InvalidArgument(f"series needs more than {3 * max_lag} points for max_lag={max_lag}")
    values = durbin_levinson(autocovariance(x, max_lag))
    conf = 1.96 / np.sqrt(len(x))
    return PacfResult(values=values, confidence=float(conf), selected_lag=select_lag(values, conf))
