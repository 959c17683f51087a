"""Oscillator ppm estimation from IQ captures.

Two methods: the apparent frequency of a known single tone, and the mean
sample count between LTE PSS arrivals. Also the one-minute averaging and
outlier filtering applied to measurement streams.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.signal

from .clock import ppm_of
from .errors import InvalidArgument, MeasurementFailed
from .signals import IqBuffer, PssTemplate, interpolate_at

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


class Method(str, enum.Enum):
    SINGLE_TONE = "SingleTone"
    LTE_PSS = "LtePss"


@dataclass(frozen=True)
class PpmMeasurement:
    timestamp_s: float
    ppm: float
    method: Method
    temperature_c: float | None = None
    quality: float = 0.0
    degraded: bool = False

    def __post_init__(self):
        if not 0.0 <= self.timestamp_s < SECONDS_PER_DAY:
            raise InvalidArgument(f"timestamp {self.timestamp_s!r} is not a second of the day")
        object.__setattr__(self, "method", Method(self.method))


@dataclass(frozen=True)
class EstimatorConfig:
    fft_size: int = 1 << 21
    upsample_factor: int = 16
    peak_threshold: float = 0.5
    f_sine_nom: float = 160e3
    f_s_nom: float = 5e6
    include_carrier_offset: bool = False
    f_carrier_nom: float = 2.4e9
    # gaussian window std as a fraction of the analysed length
    window_sigma: float = 0.1
    # noise alone reaches ~13 dB over 2**21 bins, so 20 dB separates it from a real line
    min_peak_to_median_db: float = 20.0
    min_separation: float = 0.8

    def __post_init__(self):
        if self.fft_size < 16 or self.fft_size & (self.fft_size - 1):
            raise InvalidArgument(f"fft_size must be a power of two, got {self.fft_size!r}")
        if self.upsample_factor < 1:
            raise InvalidArgument("upsample_factor must be >= 1")
        if not 0 < self.peak_threshold < 1:
            raise InvalidArgument("peak_threshold must lie in (0, 1)")


def _ratio_db(peak: float, median: float) -> float:
    return math.inf if median <= 0 else 20 * math.log10(peak / median)


def _parabolic_vertex(a: float, b: float, c: float) -> float:
    denom = a - 2 * b + c
    if denom == 0:
        return 0.0
    return 0.5 * (a - c) / denom


def tone_frequency(x: np.ndarray, f_s: float, fft_size: int, window_sigma: float = 0.1):
    """Frequency of the strongest spectral line and its peak-to-median ratio in dB.

    The first ``min(len(x), fft_size)`` samples are weighted by a Gaussian
    window, so the log-magnitude around the peak is a parabola and the
    3-point vertex lands on the true frequency.
    """
    m = min(len(x), fft_size)
    k = np.arange(m) - (m - 1) / 2
    w = np.exp(-0.5 * (k / (window_sigma * m)) ** 2).astype(np.float32)
    spectrum = np.abs(scipy.fft.fft(x[:m] * w, fft_size))
    i = int(np.argmax(spectrum))
    nb = [spectrum[(i - 1) % fft_size], spectrum[i], spectrum[(i + 1) % fft_size]]
    with np.errstate(divide="ignore"):
        la, lb, lc = np.log(np.maximum(nb, np.finfo(float).tiny))
    p = _parabolic_vertex(la, lb, lc)
    bin_ = i + p
    if bin_ >= fft_size / 2:
        bin_ -= fft_size
    ratio_db = _ratio_db(float(spectrum[i]), float(np.median(spectrum)))
    return bin_ * f_s / fft_size, ratio_db


def estimate_tone_ppm(buf: IqBuffer, cfg: EstimatorConfig, timestamp_s: float = 0.0,
                      temperature_c: float | None = None) -> PpmMeasurement:
    """Receiver skew from the apparent frequency of the reference tone."""
    if len(buf) / buf.f_s_nom < 10e-3:
        raise InvalidArgument("tone capture must span at least 10 ms")
    f_app, ratio_db = tone_frequency(buf.samples, buf.f_s_nom, cfg.fft_size, cfg.window_sigma)
    if ratio_db < cfg.min_peak_to_median_db:
        raise MeasurementFailed(f"no dominant tone (peak-to-median {ratio_db:.1f} dB)")
    if cfg.include_carrier_offset:
        # f_app = (f_sine - f_c*d*1e-6) / (1 + d*1e-6) solved for d
        ppm = (cfg.f_sine_nom - f_app) / (cfg.f_carrier_nom * 1e-6 + f_app * 1e-6)
    else:
        ppm = (cfg.f_sine_nom / f_app - 1.0) * 1e6
    return PpmMeasurement(timestamp_s=timestamp_s, ppm=float(ppm), method=Method.SINGLE_TONE,
                          temperature_c=temperature_c, quality=ratio_db)


def correlate(x: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Complex cross-correlation c[n] = sum_m x[n+m] conj(t[m]) over full-overlap lags."""
    h = np.conj(template[::-1]).astype(np.complex64)
    return scipy.signal.oaconvolve(x.astype(np.complex64, copy=False), h, mode="valid")


def pick_peaks(mag: np.ndarray, threshold: float, min_sep: int) -> np.ndarray:
    """Greedy non-maximum suppression: strongest first, at least ``min_sep`` apart."""
    cand = np.flatnonzero(mag >= threshold)
    if cand.size == 0:
        return cand
    order = cand[np.argsort(mag[cand], kind="stable")[::-1]]
    taken = np.zeros(len(mag), dtype=bool)
    accepted = []
    for i in order:
        lo, hi = max(0, i - min_sep + 1), min(len(mag), i + min_sep)
        if taken[lo:hi].any():
            continue
        taken[i] = True
        accepted.append(i)
    return np.sort(np.asarray(accepted, dtype=np.int64))


def refine_peak(corr: np.ndarray, i: int, upsample: int) -> float:
    """Position of the correlation maximum on a grid of 1/``upsample`` sample around ``i``."""
    if upsample == 1:
        return float(i)
    lo, hi = max(0, i - 24), min(len(corr), i + 25)
    seg = corr[lo:hi]
    grid = np.arange(-upsample, upsample + 1) / upsample + (i - lo)
    fine = np.abs(interpolate_at(seg, grid))
    return float(lo + grid[int(np.argmax(fine))])


def mean_spacing(positions: np.ndarray, nominal: float) -> float:
    """Average samples per PSS period from refined peak positions.

    Each peak gets a period index (gaps are rounded to whole periods, so a
    missed peak does not corrupt the count); the least-squares slope of
    position against index is the mean spacing.
    """
    gaps = np.diff(positions)
    periods = np.rint(gaps / nominal)
    if np.any(periods < 1):
        raise MeasurementFailed("peaks closer than one period")
    k = np.concatenate([[0.0], np.cumsum(periods)])
    kc = k - k.mean()
    return float(np.dot(kc, positions - positions.mean()) / np.dot(kc, kc))


def estimate_lte_ppm(buf: IqBuffer, template: PssTemplate, cfg: EstimatorConfig,
                     timestamp_s: float = 0.0, temperature_c: float | None = None) -> PpmMeasurement:
    """Receiver skew from the average PSS-to-PSS sample count."""
    period = template.period_s
    if len(buf) / buf.f_s_nom < 3 * period:
        raise InvalidArgument("capture must span at least three PSS periods")
    if not math.isclose(template.f_s_nom, buf.f_s_nom):
        raise InvalidArgument("template and capture sample rates differ")

    nominal = buf.f_s_nom * period
    corr = correlate(buf.samples, template.samples)
    mag = np.abs(corr)
    peak = float(mag.max())
    if peak == 0:
        raise MeasurementFailed("correlation is identically zero")
    # a strided median is plenty for a detection floor and much cheaper
    ratio_db = _ratio_db(peak, float(np.median(mag[::16])))
    if ratio_db < cfg.min_peak_to_median_db:
        raise MeasurementFailed(f"no PSS detected (peak-to-median {ratio_db:.1f} dB)")
    idx = pick_peaks(mag, cfg.peak_threshold * peak, int(cfg.min_separation * nominal))
    if idx.size < 2:
        raise MeasurementFailed(f"only {idx.size} PSS peak(s) found")

    pos = np.array([refine_peak(corr, int(i), cfg.upsample_factor) for i in idx])
    spacing = mean_spacing(pos, nominal)
    f_s_hat = spacing / period
    expected = len(buf) / nominal
    degraded = abs(idx.size - expected) > 0.2 * expected
    if degraded:
        log.warning("PSS peak count %d deviates from expected %.0f", idx.size, expected)
    return PpmMeasurement(timestamp_s=timestamp_s, ppm=ppm_of(f_s_hat, buf.f_s_nom),
                          method=Method.LTE_PSS, temperature_c=temperature_c,
                          quality=float(idx.size), degraded=bool(degraded))


def average_window(ms, window_s: float = 60.0):
    """Tumbling-window means of ppm and temperature, stamped at the window start."""
    if not window_s > 0:
        raise InvalidArgument("window_s must be positive")
    ms = list(ms)
    if not ms:
        return []
    ts = [m.timestamp_s for m in ms]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise InvalidArgument("measurements must be time-sorted")

    out = []
    keys = [math.floor(m.timestamp_s / window_s) for m in ms]
    start = 0
    for end in range(1, len(ms) + 1):
        if end < len(ms) and keys[end] == keys[start]:
            continue
        group = ms[start:end]
        temps = [m.temperature_c for m in group if m.temperature_c is not None]
        out.append(PpmMeasurement(
            timestamp_s=keys[start] * window_s,
            ppm=float(np.mean([m.ppm for m in group])),
            method=group[0].method,
            temperature_c=float(np.mean(temps)) if temps else None,
            quality=float(sum(m.quality for m in group)),
            degraded=any(m.degraded for m in group),
        ))
        start = end
    return out


def filter_outliers(ms, k: float = 3.5):
    """Drop measurements further than ``k`` scaled MADs from the median.

    Returns ``(kept, warned)``; ``warned`` is True when fewer than five
    measurements were given and nothing was filtered.
    """
    ms = list(ms)
    if len(ms) < 5:
        log.warning("outlier filter needs >= 5 measurements, got %d", len(ms))
        return ms, True
    v = np.array([m.ppm for m in ms])
    med = np.median(v)
    mad = 1.4826 * np.median(np.abs(v - med))
    if mad == 0:
        return ms, False
    keep = np.abs(v - med) <= k * mad
    return [m for m, ok in zip(ms, keep) if ok], False
