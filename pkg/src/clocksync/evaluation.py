"""Synthetic datasets with known ground truth and the compensation experiments run on them."""
from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import lstm
from .clock import OffsetSeries, integrate_offsets
from .dataset_io import MeasurementRecord, elapsed_seconds
from .errors import DataError, InvalidArgument, MeasurementFailed
from .estimators import EstimatorConfig, estimate_lte_ppm, estimate_tone_ppm, filter_outliers
from .signals import ChannelConfig, gen_pss_train, gen_single_tone, make_pss_template

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class OscillatorProfile:
    """Quadratic temperature law ``ppm = c0 + c1*T + c2*T**2`` and per-method noise.

    The default peaks at 0.15 ppm at 25 C and stays within +/-0.5 ppm from
    -30 to 85 C.
    """

    c0: float = 0.05625
    c1: float = 7.5e-3
    c2: float = -1.5e-4
    tone_noise: float = 0.4e-3
    lte_noise: float = 16.6e-3

    T_MIN = -30.0
    T_MAX = 85.0
    BOUND = 0.5

    def __post_init__(self):
        if self.max_abs_ppm() > self.BOUND + 1e-12:
            raise InvalidArgument(
                f"profile reaches {self.max_abs_ppm():.3f} ppm within "
                f"[{self.T_MIN}, {self.T_MAX}] C; the bound is {self.BOUND}")
        if self.tone_noise < 0 or self.lte_noise < 0:
            raise InvalidArgument("noise std must be non-negative")

    def __call__(self, temperature_c):
        t = np.asarray(temperature_c, dtype=float)
        return self.c0 + self.c1 * t + self.c2 * t * t

    def max_abs_ppm(self) -> float:
        pts = [self.T_MIN, self.T_MAX]
        if self.c2 != 0:
            vertex = -self.c1 / (2 * self.c2)
            if self.T_MIN < vertex < self.T_MAX:
                pts.append(vertex)
        return float(np.max(np.abs(self(np.array(pts)))))


@dataclass(frozen=True)
class TemperatureModel:
    """Diurnal sinusoid plus a per-minute AR(1) perturbation.

    ``phase`` is chosen so the daily maximum falls at 15:00 by default;
    ``ar_std`` is the stationary std of the AR(1) term.
    """

    mean_c: float = 15.0
    amplitude_c: float = 8.0
    phase: float = math.pi / 2 - 2 * math.pi * 15 / 24
    ar_phi: float = 0.999
    ar_std: float = 2.0

    def __post_init__(self):
        if not -1 < self.ar_phi < 1:
            raise InvalidArgument("ar_phi must lie in (-1, 1)")
        if self.ar_std < 0 or self.amplitude_c < 0:
            raise InvalidArgument("amplitude and ar_std must be non-negative")


@dataclass
class SyntheticDataset:
    """One row per minute. ``minute`` counts from the start of the recording."""

    minute: np.ndarray
    timestamp_s: np.ndarray
    temperature_c: np.ndarray
    true_ppm: np.ndarray
    lte_ppm: np.ndarray
    tone_ppm: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.minute)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.timestamp_s, self.temperature_c, self.true_ppm, self.lte_ppm, self.tone_ppm):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()

    def to_records(self) -> list[MeasurementRecord]:
        def opt(v):
            return None if np.isnan(v) else float(v)
        return [MeasurementRecord(float(t), float(T), opt(l), opt(s), opt(p))
                for t, T, l, s, p in zip(self.timestamp_s, self.temperature_c,
                                         self.lte_ppm, self.tone_ppm, self.true_ppm)]

    @classmethod
    def from_records(cls, records, config=None) -> "SyntheticDataset":
        """Build from CSV rows. Minutes with no row are not invented; gaps stay gaps."""
        records = list(records)
        el = np.asarray(elapsed_seconds([r.timestamp_s for r in records]))

        def col(name):
            return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                             for r in records], dtype=float)
        return cls(minute=np.rint(el / 60.0).astype(np.int64),
                   timestamp_s=col("timestamp_s"), temperature_c=col("temperature_c"),
                   true_ppm=col("true_ppm"), lte_ppm=col("lte_ppm"), tone_ppm=col("tone_ppm"),
                   config=dict(config or {}))

    def regularized(self) -> "SyntheticDataset":
        """Copy on a gap-free minute grid.

        Missing minutes get linearly interpolated temperature and
        ``true_ppm``; the measurement columns stay NaN there.
        """
        full = np.arange(self.minute[0], self.minute[-1] + 1)
        if len(full) == len(self.minute):
            return self
        t0 = self.timestamp_s[0]

        def interp(col):
            ok = np.isfinite(col)
            if not ok.any():
                return np.full(len(full), np.nan)
            return np.interp(full, self.minute[ok], col[ok])

        def spread(col):
            out = np.full(len(full), np.nan)
            out[self.minute - full[0]] = col
            return out
        return SyntheticDataset(minute=full, timestamp_s=np.mod(t0 + 60.0 * (full - full[0]), SECONDS_PER_DAY),
                                temperature_c=interp(self.temperature_c), true_ppm=interp(self.true_ppm),
                                lte_ppm=spread(self.lte_ppm), tone_ppm=spread(self.tone_ppm),
                                config=self.config)


def gen_synthetic_dataset(profile: OscillatorProfile = OscillatorProfile(),
                          temp_model: TemperatureModel = TemperatureModel(),
                          seed: int = 0, duration_h: float = 70.0,
                          start_s: float = 0.0) -> SyntheticDataset:
    if duration_h < 48:
        raise InvalidArgument("dataset must cover at least 48 h (training day plus test horizon)")
    n = int(round(duration_h * 60))
    rng = np.random.default_rng(seed)
    minute = np.arange(n)
    elapsed = start_s + 60.0 * minute
    timestamp = np.mod(elapsed, SECONDS_PER_DAY)

    innov = temp_model.ar_std * math.sqrt(1 - temp_model.ar_phi ** 2)
    e = rng.standard_normal(n) * innov
    ar = np.empty(n)
    ar[0] = rng.standard_normal() * temp_model.ar_std
    for i in range(1, n):
        ar[i] = temp_model.ar_phi * ar[i - 1] + e[i]
    temp = (temp_model.mean_c
            + temp_model.amplitude_c * np.sin(2 * np.pi * elapsed / SECONDS_PER_DAY + temp_model.phase)
            + ar)
    true = profile(temp)
    lte = true + rng.standard_normal(n) * profile.lte_noise
    tone = true + rng.standard_normal(n) * profile.tone_noise
    config = {"profile": _asdict(profile), "temperature": _asdict(temp_model), "seed": seed,
              "duration_h": duration_h, "start_s": start_s}
    return SyntheticDataset(minute=minute, timestamp_s=timestamp, temperature_c=temp,
                            true_ppm=true, lte_ppm=lte, tone_ppm=tone, config=config)


def _asdict(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


# ---------------------------------------------------------------------------
# measurement sweep


@dataclass
class SweepRow:
    ppm: float
    n_ok: int
    n_failed: int
    n_outliers: int
    bias: float
    precision: float
    residuals: np.ndarray


@dataclass
class SweepTable:
    estimator: str
    snr_db: float | None
    rows: list

    @property
    def grid(self) -> np.ndarray:
        return np.array([r.ppm for r in self.rows])

    @property
    def precision(self) -> np.ndarray:
        return np.array([r.precision for r in self.rows])

    @property
    def bias(self) -> np.ndarray:
        return np.array([r.bias for r in self.rows])

    def pooled(self) -> tuple[float, float]:
        """Mean and std of all residuals over the grid (accuracy, precision)."""
        res = np.concatenate([r.residuals for r in self.rows if len(r.residuals)])
        return float(res.mean()), float(res.std())

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.rows)


def sweep_grid(lo: float = -0.5, hi: float = 0.5, step: float = 0.025) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(n), 10)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def run_sweep(grid=None, estimator: str = "tone", snr_db: float | None = None, reps: int = 10,
              seed: int = 0, est_cfg: EstimatorConfig = EstimatorConfig(),
              duration_s: float = 1.0, filter: bool = True, root_index: int = 25) -> SweepTable:
    """Synthesize ``reps`` captures per grid ppm, estimate, and tabulate residuals.

    Estimator failures are counted in the table, not raised.
    """
    if reps < 10:
        raise InvalidArgument("reps must be >= 10")
    if estimator not in ("tone", "lte"):
        raise InvalidArgument(f"unknown estimator {estimator!r}")
    grid = sweep_grid() if grid is None else np.asarray(grid, dtype=float)
    template = make_pss_template(root_index, est_cfg.f_s_nom) if estimator == "lte" else None

    rows = []
    for gi, delta in enumerate(grid):
        ms = []
        failed = 0
        for r in range(reps):
            ch = ChannelConfig(ppm=float(delta), snr_db=snr_db,
                               include_carrier_offset=est_cfg.include_carrier_offset,
                               f_carrier_nom=est_cfg.f_carrier_nom,
                               seed=derive_seed(seed, gi, r))
            try:
                if estimator == "tone":
                    buf = gen_single_tone(est_cfg.f_sine_nom, ch, est_cfg.f_s_nom, duration_s)
                    ms.append(estimate_tone_ppm(buf, est_cfg))
                else:
                    buf = gen_pss_train(template, ch, duration_s)
                    ms.append(estimate_lte_ppm(buf, template, est_cfg))
            except MeasurementFailed as exc:
                log.info("ppm %.3f rep %d failed: %s", delta, r, exc)
                failed += 1
        kept = filter_outliers(ms)[0] if (filter and len(ms) >= 5) else ms
        res = np.array([m.ppm - delta for m in kept])
        rows.append(SweepRow(ppm=float(delta), n_ok=len(kept), n_failed=failed,
                             n_outliers=len(ms) - len(kept),
                             bias=float(res.mean()) if len(res) else math.nan,
                             precision=float(res.std()) if len(res) else math.nan,
                             residuals=res))
    return SweepTable(estimator=estimator, snr_db=snr_db, rows=rows)


def integer_spacing_distance(ppm, spacing: float = 25000.0, upsample: int = 16):
    """Distance of the upsampled PSS spacing ``(1 + ppm*1e-6) * spacing * upsample`` to an integer."""
    u = (1 + np.asarray(ppm, dtype=float) * 1e-6) * spacing * upsample
    return np.abs(u - np.rint(u))


# ---------------------------------------------------------------------------
# compensation runs


class Method(str, enum.Enum):
    NONE = "None"
    CONSTANT_TONE = "ConstantTone"
    CONSTANT_LTE = "ConstantLte"
    ONLINE_LSTM = "OnlineLstm"
    ORACLE = "Oracle"


@dataclass
class CompensationRun:
    method: Method
    predicted_ppm: np.ndarray
    residual_ppm: np.ndarray
    offsets: OffsetSeries
    policy: lstm.TrainPolicy
    true_ppm: np.ndarray


def _held_measurement(meas: np.ndarray, n0: int, n: int, dt: int) -> np.ndarray:
    """Value each minute would hold: the last finite measurement before its window's resync."""
    last = np.copy(meas)
    # forward-fill so a dropped minute falls back to the previous one
    idx = np.where(np.isfinite(last), np.arange(len(last)), -1)
    idx = np.maximum.accumulate(idx)
    filled = np.where(idx >= 0, last[np.maximum(idx, 0)], np.nan)
    out = np.empty(n - n0)
    for s in range(n0, n, dt):
        v = filled[s - 1] if s >= 1 else np.nan
        out[s - n0:min(s + dt, n) - n0] = 0.0 if np.isnan(v) else v
    return out


_INITIAL_CACHE: dict = {}


def _features(ds: SyntheticDataset, cyclic: bool) -> np.ndarray:
    return lstm.time_of_day_features(ds.timestamp_s, ds.temperature_c, cyclic=cyclic)


def initial_model(ds: SyntheticDataset, policy: lstm.TrainPolicy, initial_minutes: int = MINUTES_PER_DAY,
                  hidden_size: int = 24, seq_len: int = 5, cyclic: bool = False) -> lstm.LstmModel:
    """LSTM trained on the first ``initial_minutes`` LTE measurements (memoized; returns a copy)."""
    key = (ds.fingerprint(), policy.lr, policy.n_initial, policy.batch_size, policy.seed,
           initial_minutes, hidden_size, seq_len, cyclic)
    if key not in _INITIAL_CACHE:
        feats = _features(ds, cyclic)[:initial_minutes]
        X, y = lstm.make_windows(feats, ds.lte_ppm[:initial_minutes], seq_len)
        ok = np.isfinite(y)
        model = lstm.LstmModel.create(input_size=feats.shape[1], hidden_size=hidden_size,
                                      seq_len=seq_len, seed=policy.seed)
        lstm.train_initial(model, X[ok], y[ok], policy)
        if len(_INITIAL_CACHE) > 16:
            _INITIAL_CACHE.clear()
        _INITIAL_CACHE[key] = model
    return _INITIAL_CACHE[key].copy()


def online_lstm_predictions(ds: SyntheticDataset, policy: lstm.TrainPolicy,
                            initial_minutes: int = MINUTES_PER_DAY, online: bool = True,
                            **model_kw) -> np.ndarray:
    """Per-minute ppm predictions over the test horizon.

    Minutes ``[s, s + dt)`` are predicted by the model as it stands at resync
    ``s``; at ``s + dt`` the model trains ``n_online`` epochs on those minutes'
    LTE measurements before predicting the next block.
    """
    model = initial_model(ds, policy, initial_minutes, **model_kw)
    feats = _features(ds, model_kw.get("cyclic", False))
    X_all, y_all = lstm.make_windows(feats, ds.lte_ppm, model.seq_len)
    first = model.seq_len - 1  # window j predicts minute j + first
    n = len(ds)
    dt = policy.dt_online_min
    pred = np.empty(n - initial_minutes)
    for s in range(initial_minutes, n, dt):
        e = min(s + dt, n)
        pred[s - initial_minutes:e - initial_minutes] = lstm.forward(model, X_all[s - first:e - first])
        if online:
            y = y_all[s - first:e - first]
            ok = np.isfinite(y)
            lstm.online_update(model, X_all[s - first:e - first][ok], y[ok], policy)
    return pred


def _reference_ppm(ds: SyntheticDataset) -> np.ndarray:
    """Ground truth when known, else the tone measurement with gaps interpolated."""
    if np.all(np.isfinite(ds.true_ppm)):
        return ds.true_ppm
    ok = np.isfinite(ds.tone_ppm)
    if not ok.any():
        raise DataError("dataset has neither true_ppm nor tone_ppm to score against")
    return np.interp(np.arange(len(ds)), np.flatnonzero(ok), ds.tone_ppm[ok])


def run_compensation(ds: SyntheticDataset, method, policy: lstm.TrainPolicy = lstm.TrainPolicy(),
                     initial_minutes: int = MINUTES_PER_DAY, online: bool = True,
                     **model_kw) -> CompensationRun:
    """Predicted ppm, residual and integrated clock offset over the test horizon.

    The horizon starts after ``initial_minutes`` and resyncs every
    ``policy.dt_online_min`` minutes. Residuals are scored against
    ``true_ppm`` when present, else against the tone measurement.
    """
    try:
        method = Method(method)
    except ValueError:
        raise InvalidArgument(f"unknown compensation method {method!r}") from None
    n = len(ds)
    if n - initial_minutes < 1 or initial_minutes < 1:
        raise InvalidArgument("dataset must extend past the initial training period")
    truth = _reference_ppm(ds)[initial_minutes:]
    dt = policy.dt_online_min

    if method is Method.NONE:
        pred = np.zeros(n - initial_minutes)
    elif method is Method.CONSTANT_TONE:
        pred = _held_measurement(ds.tone_ppm, initial_minutes, n, dt)
    elif method is Method.CONSTANT_LTE:
        pred = _held_measurement(ds.lte_ppm, initial_minutes, n, dt)
    elif method is Method.ORACLE:
        pred = truth.copy()
    else:
        pred = online_lstm_predictions(ds, policy, initial_minutes, online=online, **model_kw)

    residual = truth - pred
    offsets = integrate_offsets(residual, dt, t0=60.0 * initial_minutes)
    return CompensationRun(method=method, predicted_ppm=pred, residual_ppm=residual,
                           offsets=offsets, policy=policy, true_ppm=truth)


@dataclass(frozen=True)
class CdfSummary:
    values: np.ndarray  # sorted |offset|, microseconds
    probs: np.ndarray

    def value_at(self, p: float) -> float:
        """Smallest |offset| v with P(|offset| <= v) >= p."""
        i = int(np.searchsorted(self.probs, p - 1e-12, side="left"))
        return float(self.values[min(i, len(self.values) - 1)])

    def prob_at(self, v: float) -> float:
        return float(np.searchsorted(self.values, v, side="right") / len(self.values))


def cdf_of(run_or_offsets) -> CdfSummary:
    off = run_or_offsets.offsets.offset if hasattr(run_or_offsets, "offsets") else run_or_offsets
    a = np.sort(np.abs(np.asarray(off, dtype=float)))
    if a.size == 0:
        raise InvalidArgument("no offsets")
    return CdfSummary(values=a, probs=np.arange(1, a.size + 1) / a.size)


@dataclass
class ResyncScan:
    minutes: int
    grid: np.ndarray
    satisfied: np.ndarray  # P(|offset| <= threshold) per grid entry
    diagnostic: str = ""


def scan_resync_intervals(ds: SyntheticDataset, method, policy: lstm.TrainPolicy = lstm.TrainPolicy(),
                          threshold_us: float = 10.0, prob: float = 0.9, grid=range(1, 121),
                          **kw) -> ResyncScan:
    """Evaluate every resync interval on ``grid``; pick the largest meeting the target."""
    if not threshold_us > 0:
        raise InvalidArgument("threshold must be positive")
    if not 0 < prob < 1:
        raise InvalidArgument("prob must lie in (0, 1)")
    grid = np.asarray(list(grid), dtype=int)
    sat = np.empty(len(grid))
    for i, dt in enumerate(grid):
        run = run_compensation(ds, method, replace(policy, dt_online_min=int(dt)), **kw)
        sat[i] = cdf_of(run).prob_at(threshold_us)
    ok = grid[sat >= prob]
    if ok.size == 0:
        return ResyncScan(0, grid, sat, f"unsatisfiable even at {grid.min()} min "
                                        f"(P={sat[0]:.3f} < {prob})")
    return ResyncScan(int(ok.max()), grid, sat)


def resync_interval_for(ds: SyntheticDataset, method, policy: lstm.TrainPolicy = lstm.TrainPolicy(),
                        threshold_us: float = 10.0, prob: float = 0.9, grid=range(1, 121), **kw) -> int:
    """Longest resync interval (minutes) keeping |offset| <= threshold with probability >= prob.

    Returns 0 when even the shortest interval fails; the reason is logged.
    """
    scan = scan_resync_intervals(ds, method, policy, threshold_us, prob, grid, **kw)
    if scan.diagnostic:
        log.warning("%s: %s", Method(method).value, scan.diagnostic)
    return scan.minutes


def sweep_n_online(ds: SyntheticDataset, policy: lstm.TrainPolicy = lstm.TrainPolicy(),
                   n_grid=range(2, 11), **kw) -> dict:
    """Mean |offset| of the online LSTM for each number of online epochs."""
    n_grid = list(n_grid)
    if not n_grid:
        raise InvalidArgument("n_grid is empty")
    out = {}
    for n in n_grid:
        run = run_compensation(ds, Method.ONLINE_LSTM, replace(policy, n_online=int(n)), **kw)
        out[int(n)] = float(np.mean(np.abs(run.offsets.offset)))
    return out
