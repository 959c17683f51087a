"""Clock arithmetic: ppm, frequency, and clock-offset accumulation.

Conventions
-----------
ppm values are plain floats, signed. One ppm of residual skew accrues one
microsecond of clock offset per second, so offsets here are in microseconds.
Offsets are tracked on a one-minute grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

MINUTE_S = 60.0
PPM_LIMIT = 1e6


def _check_ppm(value: float) -> float:
    if not math.isfinite(value) or abs(value) > PPM_LIMIT:
        raise InvalidArgument(f"ppm value {value!r} is not finite or exceeds +/-1e6")
    return value


def ppm_of(f_x: float, f_x_nom: float) -> float:
    """Fractional frequency error of ``f_x`` against ``f_x_nom``, in ppm."""
    if not f_x_nom > 0:
        raise InvalidArgument(f"nominal frequency must be positive, got {f_x_nom!r}")
    return _check_ppm((f_x - f_x_nom) / f_x_nom * 1e6)


def freq_of(ppm: float, f_nom: float) -> float:
    """Frequency that sits ``ppm`` away from ``f_nom``. Inverse of :func:`ppm_of`."""
    if not f_nom > 0:
        raise InvalidArgument(f"nominal frequency must be positive, got {f_nom!r}")
    _check_ppm(ppm)
    return f_nom + f_nom * ppm * 1e-6


def offset_step(residual_ppm: float, dt: float) -> float:
    """Clock offset in microseconds accrued over ``dt`` seconds at ``residual_ppm``."""
    if not dt >= 0:
        raise InvalidArgument(f"dt must be non-negative, got {dt!r}")
    return _check_ppm(residual_ppm) * dt


@dataclass(frozen=True)
class OffsetSeries:
    """Clock offset sampled at the end of every minute.

    ``offset[i]`` is the offset accumulated from the most recent perfect
    synchronization up to and including minute ``i``. ``resync_indices``
    lists the minutes at which accumulation restarts from zero, so for each
    ``r`` in it the offset before minute ``r`` accrues is exactly 0 and
    ``offset[r]`` holds only that minute's step.
    """

    t: np.ndarray
    offset: np.ndarray
    resync_indices: np.ndarray

    def __post_init__(self):
        if len(self.t) != len(self.offset):
            raise InvalidArgument("t and offset must have the same length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise InvalidArgument("t must be strictly increasing")
        if not np.all(np.isfinite(self.offset)):
            raise InvalidArgument("offsets must be finite")

    def __len__(self):
        return len(self.offset)


def integrate_offsets(residual_ppm_series, resync_period: int, t0: float = 0.0) -> OffsetSeries:
    """Accumulate per-minute offset steps, restarting every ``resync_period`` minutes.

    Parameters
    ----------
    residual_ppm_series : array_like
        Residual skew (actual minus predicted ppm) for each minute.
    resync_period : int
        Minutes between perfect synchronizations.
    t0 : float
        Start time in seconds; sample ``i`` is stamped ``t0 + 60 * (i + 1)``.

    Examples
    --------
    >>> integrate_offsets([1.0, -1.0], 2).offset.tolist()
    [60.0, 0.0]
    """
    r = np.asarray(residual_ppm_series, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise InvalidArgument("residual series must be a non-empty 1-D sequence")
    if int(resync_period) != resync_period or resync_period < 1:
        raise InvalidArgument(f"resync_period must be an integer >= 1, got {resync_period!r}")
    period = int(resync_period)

    steps = r * MINUTE_S
    n = r.size
    n_windows = -(-n // period)
    padded = np.zeros(n_windows * period)
    padded[:n] = steps
    # cumsum per window row keeps the reset exact (no subtraction of running totals)
    offsets = np.cumsum(padded.reshape(n_windows, period), axis=1).ravel()[:n]

    t = t0 + MINUTE_S * np.arange(1, n + 1)
    resync = np.arange(0, n, period)
    return OffsetSeries(t=t, offset=offsets, resync_indices=resync)
