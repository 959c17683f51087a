"""Command-line entry point: generate datasets, sweep estimators, evaluate compensation.

Each command writes CSV results plus ``manifest.json`` into ``--out-dir``;
``clocksync replay manifest.json`` re-runs the recorded command with the
recorded configuration.

Settings are resolved as: built-in defaults, then ``--config`` (JSON),
then ``CLOCKSYNC_<NAME>`` environment variables, then command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import lstm
from .dataset_io import read_dataset, read_manifest, write_csv_table, write_dataset, write_manifest
from .errors import DataError, InvalidArgument
from .estimators import EstimatorConfig
from .pacf import pacf

log = logging.getLogger("clocksync")

ENV_PREFIX = "CLOCKSYNC_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


def _snr(text):
    if text is None or str(text).lower() in ("none", "inf", "noiseless"):
        return None
    return float(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (type, default, help); shared across commands, each command uses a subset
OPTIONS = {
    "seed": (int, 0, "global seed"),
    "out_dir": (str, ".", "output directory"),
    # dataset
    "duration_h": (float, 70.0, "dataset length in hours"),
    "temp_mean_c": (float, 15.0, "mean temperature (C)"),
    "temp_amplitude_c": (float, 8.0, "diurnal temperature amplitude (C)"),
    "temp_ar_std_c": (float, None, "std of the slow random temperature term (C); "
                                   "default: a quarter of the amplitude"),
    "tone_noise": (float, 0.4e-3, "per-minute tone measurement noise std (ppm)"),
    "lte_noise": (float, 16.6e-3, "per-minute LTE measurement noise std (ppm)"),
    # sweep
    "estimator": (str, "tone", "estimator for the sweep: tone or lte"),
    "snr_db": (_snr, None, "per-sample SNR in dB, or 'none' for noiseless"),
    "reps": (int, 10, "captures per grid point"),
    "f_s": (float, 5e6, "nominal sampling rate (Hz)"),
    "f_sine": (float, 160e3, "nominal tone frequency (Hz)"),
    "upsample": (int, 16, "correlation upsampling factor"),
    "include_carrier_offset": (_bool, False, "model the carrier frequency offset too"),
    "no_filter": (_bool, False, "keep outliers in the sweep statistics"),
    # evaluate
    "dataset": (str, None, "dataset CSV to evaluate"),
    "dt_online_min": (int, 25, "resync / online update interval (minutes)"),
    "n_online": (int, 6, "online epochs per update"),
    "n_initial": (int, 25, "initial training epochs"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "hidden": (int, 24, "LSTM hidden units"),
    "lag": (int, 5, "LSTM input window (minutes)"),
    "threshold_us": (float, 10.0, "clock offset threshold (us)"),
    "prob": (float, 0.9, "required fraction of time within the threshold"),
    "max_interval_min": (int, 120, "longest resync interval scanned (minutes)"),
    "pacf": (_bool, False, "also write the partial autocorrelation of the LTE series"),
    "oracle": (_bool, False, "replace the LSTM by a perfect predictor"),
}

COMMANDS = {
    "gen-data": ("seed", "out_dir", "duration_h", "temp_mean_c", "temp_amplitude_c",
                 "temp_ar_std_c", "tone_noise", "lte_noise"),
    "sweep-ppm": ("seed", "out_dir", "estimator", "snr_db", "reps", "f_s", "f_sine",
                  "upsample", "include_carrier_offset", "no_filter"),
    "evaluate": ("seed", "out_dir", "dataset", "dt_online_min", "n_online", "n_initial", "lr",
                 "hidden", "lag", "threshold_us", "prob", "max_interval_min", "pacf", "oracle"),
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clocksync", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file of settings; flags override it")
        for key in keys:
            typ, default, text = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                sp.add_argument(flag, action="store_const", const=True, default=None,
                                help=f"{text} (default: {default})")
            else:
                kw = {"choices": ("tone", "lte")} if key == "estimator" else {}
                sp.add_argument(flag, type=typ, default=None, metavar=key.upper(),
                                help=f"{text} (default: {default})", **kw)
    rp = sub.add_parser("replay", help="re-run a command from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out-dir", default=None, help="write outputs here instead")
    return p


def resolve_config(command: str, args: argparse.Namespace, environ=os.environ) -> dict:
    keys = COMMANDS[command]
    cfg = {k: OPTIONS[k][1] for k in keys}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        for k, v in file_cfg.items():
            k = k.replace("-", "_")
            if k not in cfg:
                raise UsageError(f"{args.config}: unknown setting {k!r} for {command}")
            cfg[k] = v
    for k in keys:
        env = environ.get(ENV_PREFIX + k.upper())
        if env is not None:
            cfg[k] = env
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    for k in keys:
        if cfg[k] is not None:
            try:
                cfg[k] = OPTIONS[k][0](cfg[k])
            except (TypeError, ValueError):
                raise UsageError(f"invalid value for {k}: {cfg[k]!r}") from None
    if "estimator" in cfg and cfg["estimator"] not in ("tone", "lte"):
        raise UsageError(f"estimator must be tone or lte, got {cfg['estimator']!r}")
    if cfg.get("dataset"):
        cfg["dataset"] = str(Path(cfg["dataset"]).resolve())
    if "seed" in cfg and cfg["seed"] < 0:
        raise UsageError("seed must be non-negative")
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(cfg: dict) -> list:
    amp = cfg["temp_amplitude_c"]
    ar_std = cfg["temp_ar_std_c"] if cfg["temp_ar_std_c"] is not None else amp / 4
    profile = ev.OscillatorProfile(tone_noise=cfg["tone_noise"], lte_noise=cfg["lte_noise"])
    temp = ev.TemperatureModel(mean_c=cfg["temp_mean_c"], amplitude_c=amp, ar_std=ar_std)
    ds = ev.gen_synthetic_dataset(profile, temp, seed=cfg["seed"], duration_h=cfg["duration_h"])
    write_dataset(ds.to_records(), _out(cfg) / "dataset.csv")
    return ["dataset.csv"]


def cmd_sweep_ppm(cfg: dict) -> list:
    est = EstimatorConfig(f_s_nom=cfg["f_s"], f_sine_nom=cfg["f_sine"], upsample_factor=cfg["upsample"],
                          include_carrier_offset=cfg["include_carrier_offset"])
    table = ev.run_sweep(estimator=cfg["estimator"], snr_db=cfg["snr_db"], reps=cfg["reps"],
                         seed=cfg["seed"], est_cfg=est, filter=not cfg["no_filter"])
    rows = [(r.ppm, r.bias, r.precision, r.n_ok, r.n_failed, r.n_outliers) for r in table.rows]
    write_csv_table(_out(cfg) / "sweep.csv",
                    ("ppm", "bias_ppm", "precision_ppm", "n_ok", "n_failed", "n_outliers"), rows)
    acc, prec = table.pooled()
    log.info("pooled bias %.3g ppm, precision %.3g ppm, %d failures", acc, prec, table.n_failed)
    return ["sweep.csv"]


def _load_dataset(path) -> ev.SyntheticDataset:
    if path is None:
        raise UsageError("evaluate needs --dataset")
    if not Path(path).is_file():
        raise DataError(f"dataset not found: {path}")
    return ev.SyntheticDataset.from_records(read_dataset(path)).regularized()


def cmd_evaluate(cfg: dict) -> list:
    ds = _load_dataset(cfg["dataset"])
    if len(ds) <= ev.MINUTES_PER_DAY + cfg["lag"]:
        raise DataError(f"dataset has {len(ds)} minutes; need more than one day plus the input window")
    policy = lstm.TrainPolicy(lr=cfg["lr"], n_initial=cfg["n_initial"], n_online=cfg["n_online"],
                              dt_online_min=cfg["dt_online_min"], seed=cfg["seed"])
    model_kw = {"hidden_size": cfg["hidden"], "seq_len": cfg["lag"]}
    out = _out(cfg)
    methods = [ev.Method.NONE, ev.Method.CONSTANT_TONE, ev.Method.CONSTANT_LTE,
               ev.Method.ORACLE if cfg["oracle"] else ev.Method.ONLINE_LSTM]
    grid = range(1, cfg["max_interval_min"] + 1)

    def kw(m):
        return model_kw if m is ev.Method.ONLINE_LSTM else {}

    cdf_rows, interval_rows = [], []
    for m in methods:
        cdf = ev.cdf_of(ev.run_compensation(ds, m, policy, **kw(m)))
        for v, p in zip(cdf.values, cdf.probs):
            cdf_rows.append((m.value, float(v), float(p)))
        scan = ev.scan_resync_intervals(ds, m, policy, cfg["threshold_us"], cfg["prob"], grid, **kw(m))
        if scan.diagnostic:
            log.warning("%s: %s", m.value, scan.diagnostic)
        interval_rows.append((m.value, scan.minutes, float(cdf.value_at(cfg["prob"]))))
    write_csv_table(out / "cdf.csv", ("method", "abs_offset_us", "cdf"), cdf_rows)
    write_csv_table(out / "resync_intervals.csv",
                    ("method", "interval_min", f"offset_us_at_p_dt{cfg['dt_online_min']}"), interval_rows)
    outputs = ["cdf.csv", "resync_intervals.csv"]

    if not cfg["oracle"]:
        curve = ev.sweep_n_online(ds, policy, **model_kw)
        write_csv_table(out / "n_online_sweep.csv", ("n_online", "mean_abs_offset_us"),
                        [(n, v) for n, v in curve.items()])
        outputs.append("n_online_sweep.csv")
    if cfg["pacf"]:
        series = ds.lte_ppm[np.isfinite(ds.lte_ppm)]
        res = pacf(series)
        write_csv_table(out / "pacf.csv", ("lag", "pacf", "confidence", "selected"),
                        [(k, float(v), res.confidence, int(k == res.selected_lag))
                         for k, v in enumerate(res.values)])
        log.info("selected lag %d", res.selected_lag)
        outputs.append("pacf.csv")
    return outputs


HANDLERS = {"gen-data": cmd_gen_data, "sweep-ppm": cmd_sweep_ppm, "evaluate": cmd_evaluate}


def run_command(command: str, cfg: dict) -> list:
    outputs = HANDLERS[command](cfg)
    manifest_cfg = {k: v for k, v in cfg.items() if k != "out_dir"}
    write_manifest(Path(cfg["out_dir"]) / "manifest.json", command, manifest_cfg,
                   {"seed": cfg["seed"]}, outputs)
    return outputs


def replay(manifest_path, out_dir=None) -> list:
    m = read_manifest(manifest_path)
    command = m["command"]
    if command not in HANDLERS:
        raise DataError(f"{manifest_path}: unknown command {command!r}")
    cfg = {k: OPTIONS[k][1] for k in COMMANDS[command]}
    unknown = set(m["config"]) - set(cfg)
    if unknown:
        raise DataError(f"{manifest_path}: unknown settings {sorted(unknown)}")
    cfg.update(m["config"])
    cfg["seed"] = m["seeds"].get("seed", cfg["seed"])
    cfg["out_dir"] = str(out_dir) if out_dir else str(Path(manifest_path).parent)
    return run_command(command, cfg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            outputs = replay(args.manifest, args.out_dir)
        else:
            cfg = resolve_config(args.command, args)
            outputs = run_command(args.command, cfg)
    except (UsageError, InvalidArgument) as exc:
        print(f"clocksync: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"clocksync: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"clocksync: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    for o in outputs:
        print(o)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
