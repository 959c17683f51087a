"""Single-layer LSTM regressor predicting oscillator ppm, trained online with Adam.

Each input is a window of ``seq_len`` consecutive one-minute feature rows
(temperature, time of day); the target is the ppm at the window's last
minute. The recurrence starts from zero hidden and cell state, and a dense
head maps the final hidden state to one scalar.

Gate layout in the stacked weight matrices is ``[input, forget, cell, output]``.
"""
from __future__ import annotations

import copy
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

SECONDS_PER_DAY = 86400.0
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W", "U", "b", "w_out", "b_out")


@dataclass(frozen=True)
class TrainPolicy:
    lr: float = 1e-3
    n_initial: int = 25
    n_online: int = 6
    dt_online_min: int = 25
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")
        for name in ("n_initial", "n_online", "dt_online_min", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmModel:
    input_size: int = 2
    hidden_size: int = 24
    seq_len: int = 5
    params: dict = field(default_factory=dict)
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_step: int = 0
    rng: np.random.Generator | None = None

    @classmethod
    def create(cls, input_size=2, hidden_size=24, seq_len=5, seed=0):
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases except forget gate = 1."""
        rng = np.random.default_rng(seed)
        h = hidden_size
        bound = 1.0 / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params = {
            "W": rng.uniform(-bound, bound, (4 * h, input_size)),
            "U": rng.uniform(-bound, bound, (4 * h, h)),
            "b": b,
            "w_out": rng.uniform(-bound, bound, h),
            "b_out": np.zeros(1),
        }
        model = cls(input_size=input_size, hidden_size=hidden_size, seq_len=seq_len,
                    params=params, rng=rng)
        model.reset_optimizer()
        return model

    def reset_optimizer(self):
        self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_step = 0

    def copy(self) -> "LstmModel":
        return copy.deepcopy(self)

    @property
    def is_normalized(self) -> bool:
        return self.feature_mean is not None

    def fit_normalization(self, rows: np.ndarray):
        """Freeze per-feature mean/std. Raises if already frozen."""
        if self.is_normalized:
            raise InvalidArgument("normalization statistics are already frozen")
        rows = np.asarray(rows, dtype=float).reshape(-1, self.input_size)
        std = rows.std(axis=0)
        self.feature_mean = rows.mean(axis=0)
        self.feature_std = np.where(std > 0, std, 1.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if not self.is_normalized:
            return x
        return (x - self.feature_mean) / self.feature_std


def time_of_day_features(timestamp_s, temperature_c, cyclic: bool = False) -> np.ndarray:
    """Feature rows ``[temperature, seconds-of-day / 86400]``.

    With ``cyclic`` the time of day becomes ``sin`` and ``cos`` of its phase,
    giving three columns.
    """
    tod = np.mod(np.asarray(timestamp_s, dtype=float), SECONDS_PER_DAY) / SECONDS_PER_DAY
    temp = np.asarray(temperature_c, dtype=float)
    if cyclic:
        return np.column_stack([temp, np.sin(2 * np.pi * tod), np.cos(2 * np.pi * tod)])
    return np.column_stack([temp, tod])


def make_windows(features: np.ndarray, targets, seq_len: int):
    """Stride-1 windows; window ``j`` covers rows ``j .. j+seq_len-1`` and predicts the last."""
    features = np.asarray(features, dtype=float)
    n = len(features)
    if n < seq_len:
        raise InvalidArgument(f"need at least {seq_len} rows, got {n}")
    idx = np.arange(seq_len)[None, :] + np.arange(n - seq_len + 1)[:, None]
    X = features[idx]
    y = None if targets is None else np.asarray(targets, dtype=float)[seq_len - 1:]
    return X, y


def _check_windows(model: LstmModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (model.seq_len, model.input_size):
        raise InvalidArgument(
            f"window shape {X.shape} does not match (seq_len={model.seq_len}, "
            f"features={model.input_size})")
    return X


def _forward(model: LstmModel, X: np.ndarray, keep_cache: bool):
    p = model.params
    H = model.hidden_size
    B, L, _ = X.shape
    Xn = model.normalize(X)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(L):
        z = Xn[:, t] @ p["W"].T + h @ p["U"].T + p["b"]
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            cache.append((Xn[:, t], h_prev, c_prev, i, f, g, o, tc))
    y = h @ p["w_out"] + p["b_out"][0]
    return y, h, cache


def forward(model: LstmModel, window) -> float | np.ndarray:
    """Predicted ppm for one ``(seq_len, features)`` window, or a vector for a batch."""
    X = np.asarray(window, dtype=float)
    single = X.ndim == 2
    y, _, _ = _forward(model, _check_windows(model, X), keep_cache=False)
    return float(y[0]) if single else y


def backward(model: LstmModel, windows, targets):
    """Loss ``sum((y - target)**2)`` over the batch and its gradient for every parameter.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.params``.
    """
    X = _check_windows(model, windows)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if targets.shape != (X.shape[0],):
        raise InvalidArgument("one target per window is required")
    p = model.params
    y, h_last, cache = _forward(model, X, keep_cache=True)
    err = y - targets
    loss = float(np.sum(err ** 2))
    dy = 2.0 * err

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    grads["w_out"] = h_last.T @ dy
    grads["b_out"] = np.array([dy.sum()])
    dh = dy[:, None] * p["w_out"][None, :]
    dc = np.zeros_like(dh)
    for x_t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        grads["W"] += dz.T @ x_t
        grads["U"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ p["U"]
        dc = dc * f
    return loss, grads


def adam_step(model: LstmModel, grads: dict, policy: TrainPolicy):
    model.adam_step += 1
    t = model.adam_step
    b1, b2 = policy.beta1, policy.beta2
    for k, g in grads.items():
        m = model.adam_m[k]
        v = model.adam_v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        model.params[k] -= policy.lr * m_hat / (np.sqrt(v_hat) + policy.eps)


def _run_epochs(model: LstmModel, X, y, epochs: int, policy: TrainPolicy) -> list:
    n = len(X)
    losses = []
    for _ in range(epochs):
        order = model.rng.permutation(n)
        total = 0.0
        for start in range(0, n, policy.batch_size):
            sel = order[start:start + policy.batch_size]
            loss, grads = backward(model, X[sel], y[sel])
            for g in grads.values():
                g /= len(sel)
            adam_step(model, grads, policy)
            total += loss
        losses.append(total / n)
    return losses


def mse(model: LstmModel, X, y) -> float:
    return float(np.mean((forward(model, X) - y) ** 2))


def train_initial(model: LstmModel, X, y, policy: TrainPolicy) -> list:
    """Freeze feature statistics on ``X`` and run ``policy.n_initial`` shuffled epochs.

    Mutates ``model`` and returns the per-epoch mean training loss. The
    shuffling generator is re-seeded from ``policy.seed``.
    """
    X = _check_windows(model, X)
    y = np.asarray(y, dtype=float)
    if len(X) < 2 or len(X) != len(y):
        raise InvalidArgument("initial training needs at least two windows with one target each")
    if not model.is_normalized:
        model.fit_normalization(X.reshape(-1, model.input_size))
    model.rng = np.random.default_rng(policy.seed)
    return _run_epochs(model, X, y, policy.n_initial, policy)


def online_update(model: LstmModel, X_new, y_new, policy: TrainPolicy) -> list:
    """``policy.n_online`` epochs over only the new windows; Adam state carries over."""
    if X_new is None or len(X_new) == 0:
        return []
    X_new = _check_windows(model, X_new)
    y_new = np.asarray(y_new, dtype=float)
    if model.rng is None:
        model.rng = np.random.default_rng(policy.seed)
    return _run_epochs(model, X_new, y_new, policy.n_online, policy)


def predict_series(model: LstmModel, features) -> np.ndarray:
    """One prediction per minute from minute ``seq_len - 1`` on, each using only rows up to it."""
    features = np.asarray(features, dtype=float)
    if len(features) < model.seq_len:
        raise InvalidArgument(f"horizon must cover at least {model.seq_len} rows")
    X, _ = make_windows(features, None, model.seq_len)
    return forward(model, X)


def save_checkpoint(model: LstmModel, path) -> Path:
    """Write ``model`` as a zip of ``.npy`` arrays plus ``meta.json``.

    Layout (format version 1)::

        meta.json            version, sizes, adam_step, rng state, normalized flag
        param/<name>.npy     W (4H, I), U (4H, H), b (4H,), w_out (H,), b_out (1,)
        adam_m/<name>.npy    first moments, same shapes
        adam_v/<name>.npy    second moments, same shapes
        norm/mean.npy        feature means (I,)   only when normalized
        norm/std.npy         feature stds (I,)    only when normalized

    Arrays are float64 little-endian, so loading is bit-exact.
    """
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_size": model.input_size,
        "hidden_size": model.hidden_size,
        "seq_len": model.seq_len,
        "adam_step": model.adam_step,
        "normalized": model.is_normalized,
        "rng_state": None if model.rng is None else model.rng.bit_generator.state,
    }
    arrays = {}
    for name in PARAM_NAMES:
        arrays[f"param/{name}.npy"] = model.params[name]
        arrays[f"adam_m/{name}.npy"] = model.adam_m[name]
        arrays[f"adam_v/{name}.npy"] = model.adam_v[name]
    if model.is_normalized:
        arrays["norm/mean.npy"] = model.feature_mean
        arrays["norm/std.npy"] = model.feature_std
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.asarray(arr, dtype="<f8"), allow_pickle=False)
            zf.writestr(name, buf.getvalue())
    return path


def load_checkpoint(path) -> LstmModel:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InvalidArgument(f"unsupported checkpoint version {meta.get('version')!r}")

        def arr(name):
            return np.load(io.BytesIO(zf.read(name)), allow_pickle=False).astype(float)

        model = LstmModel(input_size=meta["input_size"], hidden_size=meta["hidden_size"],
                          seq_len=meta["seq_len"], adam_step=meta["adam_step"])
        model.params = {n: arr(f"param/{n}.npy") for n in PARAM_NAMES}
        model.adam_m = {n: arr(f"adam_m/{n}.npy") for n in PARAM_NAMES}
        model.adam_v = {n: arr(f"adam_v/{n}.npy") for n in PARAM_NAMES}
        if meta["normalized"]:
            model.feature_mean = arr("norm/mean.npy")
            model.feature_std = arr("norm/std.npy")
    if meta["rng_state"] is not None:
        model.rng = np.random.default_rng()
        model.rng.bit_generator.state = meta["rng_state"]
    return model
