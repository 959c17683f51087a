"""Synthetic receiver captures: a single tone and an FDD-LTE PSS train.

The receiver's oscillator skew ``ppm`` makes it clock ``1 + ppm*1e-6`` samples
for every sample it believes it takes, so a waveform generated on the nominal
grid is seen resampled by that ratio.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import i0

from .errors import InvalidArgument

LTE_BASE_RATE = 1.92e6
LTE_SUBCARRIER_SPACING = 15e3
PSS_PERIOD_S = 5e-3
PSS_ROOTS = {0: 25, 1: 29, 2: 34}  # N_ID_2 -> Zadoff-Chu root
MAX_SKEW_PPM = 50.0

KERNEL_TAPS = 16
KAISER_BETA = 8.0
_HALF = KERNEL_TAPS // 2


@dataclass
class IqBuffer:
    samples: np.ndarray
    f_s_nom: float
    duration_s: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise InvalidArgument("IQ buffer is empty")
        if not self.f_s_nom > 0:
            raise InvalidArgument("nominal sample rate must be positive")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ChannelConfig:
    """Receiver skew and noise. ``snr_db=None`` means noiseless."""

    ppm: float = 0.0
    snr_db: float | None = None
    include_carrier_offset: bool = False
    f_carrier_nom: float = 2.4e9
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.ppm) or abs(self.ppm) > MAX_SKEW_PPM:
            raise InvalidArgument(f"|ppm| must be <= {MAX_SKEW_PPM}, got {self.ppm!r}")
        if self.include_carrier_offset and not self.f_carrier_nom > 0:
            raise InvalidArgument("carrier frequency must be positive")

    @property
    def ratio(self) -> float:
        return 1.0 + self.ppm * 1e-6


@dataclass(frozen=True)
class PssTemplate:
    samples: np.ndarray
    root_index: int
    f_s_nom: float
    period_s: float = PSS_PERIOD_S


def zadoff_chu_pss(root: int) -> np.ndarray:
    """The 62 PSS values d_u(n) of the LTE downlink (length-63 ZC, middle element dropped)."""
    n1 = np.arange(31)
    n2 = np.arange(31, 62)
    return np.concatenate([
        np.exp(-1j * np.pi * root * n1 * (n1 + 1) / 63),
        np.exp(-1j * np.pi * root * (n2 + 1) * (n2 + 2) / 63),
    ])


def pss_subcarriers() -> np.ndarray:
    """Subcarrier index of each PSS value: -31..-1 then 1..31 (DC left empty)."""
    return np.concatenate([np.arange(-31, 0), np.arange(1, 32)])


def make_pss_template(root_index: int = 25, f_s_nom: float = 5e6) -> PssTemplate:
    """One PSS OFDM symbol (no cyclic prefix) sampled at ``f_s_nom``, unit energy.

    The symbol is the 128-point inverse DFT used at 1.92 Msps. Other rates
    evaluate the same band-limited symbol on their own sample grid over one
    useful-symbol duration, which is exact trigonometric interpolation of the
    128-sample waveform.
    """
    if root_index not in PSS_ROOTS.values():
        raise InvalidArgument(f"PSS root must be one of 25, 29, 34, got {root_index!r}")
    if not f_s_nom >= LTE_BASE_RATE:
        raise InvalidArgument(f"sample rate must be >= {LTE_BASE_RATE:g}, got {f_s_nom!r}")

    d = zadoff_chu_pss(root_index)
    k = pss_subcarriers()
    n_samples = int(round(f_s_nom / LTE_SUBCARRIER_SPACING))
    t = np.arange(n_samples) / f_s_nom
    x = np.exp(2j * np.pi * LTE_SUBCARRIER_SPACING * np.outer(t, k)) @ d
    x /= np.sqrt(np.sum(np.abs(x) ** 2))
    return PssTemplate(samples=x, root_index=root_index, f_s_nom=f_s_nom)


def _kernel(v: np.ndarray, cutoff: float) -> np.ndarray:
    inside = np.abs(v) < _HALF
    arg = np.sqrt(np.clip(1.0 - (v / _HALF) ** 2, 0.0, None))
    win = i0(KAISER_BETA * arg) / i0(KAISER_BETA)
    return np.where(inside, cutoff * np.sinc(cutoff * v) * win, 0.0)


_PHASES = 4096


@functools.lru_cache(maxsize=8)
def _kernel_table(cutoff: float) -> np.ndarray:
    # row p holds the 16 tap weights for fractional delay p / _PHASES; one extra row for frac -> 1
    frac = np.arange(_PHASES + 1) / _PHASES
    offs = np.arange(-_HALF + 1, _HALF + 1)
    table = _kernel(frac[:, None] - offs[None, :], cutoff)
    table.setflags(write=False)
    return table


def _weights(frac: np.ndarray, cutoff: float) -> np.ndarray:
    table = _kernel_table(float(cutoff))
    u = frac * _PHASES
    p = np.minimum(u.astype(np.int64), _PHASES - 1)
    a = (u - p)[:, None]
    return table[p] * (1.0 - a) + table[p + 1] * a


def interpolate_at(x: np.ndarray, positions: np.ndarray, cutoff: float = 1.0) -> np.ndarray:
    """Band-limited value of ``x`` at fractional ``positions``.

    16-tap Kaiser-windowed sinc (beta 8), tabulated at 4096 fractional phases
    with linear interpolation between them; samples outside ``x`` count as zero.
    """
    positions = np.asarray(positions, dtype=float)
    base = np.floor(positions).astype(np.int64)
    frac = positions - base
    offs = np.arange(-_HALF + 1, _HALF + 1)  # -7..8
    weights = _weights(frac, cutoff)
    idx = base[:, None] + offs[None, :]
    padded = np.concatenate([np.zeros(_HALF, x.dtype), x, np.zeros(_HALF + 1, x.dtype)])
    idx = np.clip(idx + _HALF, 0, len(padded) - 1)
    return np.einsum("ij,ij->i", padded[idx], weights)


def resample(buf: IqBuffer, ratio: float, offset: float = 0.0, chunk: int = 1 << 16) -> IqBuffer:
    """Resample ``buf`` so output sample n takes the input value at ``n / ratio + offset``.

    ``ratio > 1`` produces more samples (a receiver clocking fast). Output
    length is ``floor(len * ratio)``.
    """
    if not 0.9 <= ratio <= 1.1:
        raise InvalidArgument(f"resampling ratio must lie in [0.9, 1.1], got {ratio!r}")
    x = np.asarray(buf.samples)
    n_out = int(math.floor(len(x) * ratio))
    cutoff = min(1.0, ratio)
    out = np.empty(n_out, dtype=np.result_type(x.dtype, np.complex64))
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out))
        out[start:start + len(n)] = interpolate_at(x, n / ratio + offset, cutoff)
    return IqBuffer(samples=out, f_s_nom=buf.f_s_nom, duration_s=buf.duration_s, meta=dict(buf.meta))


def _noise(rng: np.random.Generator, n: int, snr_db: float | None,
           signal_power: float = 1.0) -> np.ndarray | None:
    """Circular complex Gaussian noise at ``signal_power / 10**(snr_db/10)``."""
    if snr_db is None:
        return None
    sigma = math.sqrt(signal_power * 10.0 ** (-snr_db / 10.0) / 2.0)
    w = rng.standard_normal(2 * n, dtype=np.float32).view(np.complex64)
    w *= np.float32(sigma)
    return w


def _phasor(cycles_per_sample: float, n: int, phase0: float, block: int = 4096) -> np.ndarray:
    # exp(j(2 pi f (block*q + r) + phase0)) as an outer product of two short tables
    q = np.arange(-(-n // block))
    r = np.arange(block)
    coarse = np.exp(1j * (2 * np.pi * np.mod(cycles_per_sample * block * q, 1.0) + phase0))
    fine = np.exp(2j * np.pi * cycles_per_sample * r)
    return np.outer(coarse, fine).ravel()[:n].astype(np.complex64)


def apparent_tone_frequency(f_sine_nom: float, cfg: ChannelConfig) -> float:
    """Baseband frequency at which a receiver with skew ``cfg.ppm`` sees the tone."""
    k = cfg.f_carrier_nom * cfg.ppm * 1e-6 if cfg.include_carrier_offset else 0.0
    return (f_sine_nom - k) / cfg.ratio


def gen_single_tone(f_sine_nom: float, cfg: ChannelConfig, f_s_nom: float = 5e6,
                    duration_s: float = 1.0) -> IqBuffer:
    """Unit-amplitude complex tone as captured by a skewed receiver.

    The tone is written directly at its apparent frequency, which is what
    an ideal resampler would produce; the start phase is drawn from the seed.
    """
    if not 0 < f_sine_nom < f_s_nom / 2:
        raise InvalidArgument("tone frequency must lie in (0, f_s_nom / 2)")
    if not duration_s > 0:
        raise InvalidArgument("duration must be positive")
    f_app = apparent_tone_frequency(f_sine_nom, cfg)
    if abs(f_app) >= f_s_nom / 2:
        raise InvalidArgument(f"apparent tone frequency {f_app:.1f} Hz aliases at {f_s_nom:g} sps")

    rng = np.random.default_rng(cfg.seed)
    n = int(round(duration_s * f_s_nom * cfg.ratio))
    phase0 = rng.uniform(0.0, 2 * np.pi)
    x = _phasor(f_app / f_s_nom, n, phase0)
    w = _noise(rng, n, cfg.snr_db)
    if w is not None:
        x += w
    meta = {"f_s_nom": f_s_nom, "ppm": cfg.ppm, "snr_db": cfg.snr_db, "seed": cfg.seed}
    return IqBuffer(samples=x, f_s_nom=f_s_nom, duration_s=duration_s, meta=meta)


def gen_pss_train(template: PssTemplate, cfg: ChannelConfig, duration_s: float = 1.0) -> IqBuffer:
    """PSS symbols every ``template.period_s`` of true time, seen by a skewed receiver.

    The first symbol starts at a random integer position within one period and
    the receiver's sampling phase is a random fraction of a sample, both drawn
    from ``cfg.seed``. Each symbol has unit power per sample; ``snr_db`` is
    the measured SNR of the whole capture (mean signal power over noise
    power), so while a symbol is on air the per-sample SNR is higher by the
    inverse duty cycle, about 18.7 dB at 5 Msps.

    Only output samples within reach of a symbol are interpolated; the rest of
    the resampled train is exactly zero before noise is added.
    """
    if not duration_s >= 3 * template.period_s:
        raise InvalidArgument("capture must span at least three PSS periods")
    fs = template.f_s_nom
    ratio = cfg.ratio
    rng = np.random.default_rng(cfg.seed)

    spacing = int(round(fs * template.period_s))
    n_in = int(round(duration_s * fs))
    n_out = int(round(duration_s * fs * ratio))
    sym = template.samples * np.sqrt(len(template.samples))
    length = len(sym)

    first = int(rng.integers(0, max(1, spacing - length)))
    phase = float(rng.uniform(0.0, 1.0))
    starts = np.arange(first, n_in - length, spacing)

    out = np.zeros(n_out, dtype=np.complex64)
    cutoff = min(1.0, ratio)
    for s in starts:
        # output samples whose input position n / ratio + phase falls near this symbol
        lo = max(0, int(math.ceil((s - _HALF - phase) * ratio)))
        hi = min(n_out, int(math.floor((s + length + _HALF - phase) * ratio)) + 1)
        n = np.arange(lo, hi)
        out[lo:hi] = interpolate_at(sym, n / ratio + phase - s, cutoff)

    power = float(np.mean(np.abs(out.astype(np.complex128)) ** 2))
    w = _noise(rng, n_out, cfg.snr_db, power)
    if w is not None:
        out += w
    meta = {"f_s_nom": fs, "ppm": cfg.ppm, "snr_db": cfg.snr_db, "seed": cfg.seed,
            "n_pss": int(len(starts))}
    return IqBuffer(samples=out, f_s_nom=fs, duration_s=duration_s, meta=meta)


def write_iq(buf: IqBuffer, path) -> Path:
    """Write interleaved little-endian float32 I/Q plus a ``.json`` sidecar.

    Returns the sidecar path. The sidecar carries ``f_s_nom``, ``ppm``,
    ``snr_db``, ``seed`` (``None`` when unknown) and ``duration_s``.
    """
    path = Path(path)
    iq = np.empty(2 * len(buf.samples), dtype="<f4")
    iq[0::2] = np.real(buf.samples)
    iq[1::2] = np.imag(buf.samples)
    path.write_bytes(iq.tobytes())
    meta = {
        "f_s_nom": buf.f_s_nom,
        "ppm": buf.meta.get("ppm"),
        "snr_db": buf.meta.get("snr_db"),
        "seed": buf.meta.get("seed"),
        "duration_s": buf.duration_s,
    }
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_iq(path) -> IqBuffer:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    meta = json.loads(sidecar.read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size % 2:
        raise InvalidArgument(f"{path}: odd number of float32 values")
    x = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64)
    f_s = float(meta["f_s_nom"])
    duration = meta.get("duration_s") or len(x) / f_s
    return IqBuffer(samples=x, f_s_nom=f_s, duration_s=float(duration), meta=meta)
