"""CSV persistence for per-minute measurement records, plus JSON run manifests.

File format::

    timestamp_s,temperature_c,lte_ppm,tone_ppm,true_ppm

UTF-8, LF line endings, one row per minute. ``timestamp_s`` is the second
of the day and wraps at midnight. Missing measurements are empty fields.
Floats are written with ``repr`` so a read gives back the identical value.
"""
from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import DataError

HEADER = ("timestamp_s", "temperature_c", "lte_ppm", "tone_ppm", "true_ppm")
PPM_COLUMNS = ("lte_ppm", "tone_ppm", "true_ppm")
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class MeasurementRecord:
    timestamp_s: float
    temperature_c: float
    lte_ppm: float | None = None
    tone_ppm: float | None = None
    true_ppm: float | None = None


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _parse(cell: str, column: str, line: int, optional: bool):
    if cell == "":
        if optional:
            return None
        raise DataError(f"missing value in column {column!r}", line)
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} in column {column!r}", line) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r} in column {column!r}", line)
    return v


def elapsed_seconds(timestamps) -> list:
    """Unwrap seconds-of-day into elapsed seconds from the first row.

    A drop of more than half a day is a midnight rollover; any other decrease
    (or a repeat) means the rows are out of order.
    """
    out = []
    day = 0.0
    prev = None
    for i, t in enumerate(timestamps):
        if prev is not None and t <= prev:
            if prev - t > SECONDS_PER_DAY / 2:
                day += SECONDS_PER_DAY
            else:
                raise DataError(f"timestamps not increasing ({prev} then {t})", i + 2)
        out.append(day + t)
        prev = t
    return [x - out[0] for x in out] if out else out


def gaps(records) -> list:
    """Row indices where the cadence skips at least one minute."""
    el = elapsed_seconds([r.timestamp_s for r in records])
    return [i for i in range(1, len(el)) if el[i] - el[i - 1] > 90.0]


def _check_record(r: MeasurementRecord, line=None):
    if not 0 <= r.timestamp_s < SECONDS_PER_DAY:
        raise DataError(f"timestamp {r.timestamp_s} is not a second of the day", line)
    if all(getattr(r, c) is None for c in PPM_COLUMNS):
        raise DataError("row has no ppm value", line)


def read_dataset(path) -> list[MeasurementRecord]:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file", 1) from None
        if tuple(header) != HEADER:
            raise DataError(f"{path}: header {header} does not match {list(HEADER)}", 1)
        for line, row in enumerate(reader, start=2):
            if len(row) != len(HEADER):
                raise DataError(f"expected {len(HEADER)} fields, got {len(row)}", line)
            rec = MeasurementRecord(
                timestamp_s=_parse(row[0], "timestamp_s", line, optional=False),
                temperature_c=_parse(row[1], "temperature_c", line, optional=False),
                lte_ppm=_parse(row[2], "lte_ppm", line, optional=True),
                tone_ppm=_parse(row[3], "tone_ppm", line, optional=True),
                true_ppm=_parse(row[4], "true_ppm", line, optional=True),
            )
            _check_record(rec, line)
            records.append(rec)
    elapsed_seconds([r.timestamp_s for r in records])
    return records


def format_dataset(records) -> str:
    lines = [",".join(HEADER)]
    for r in records:
        _check_record(r)
        lines.append(",".join([_fmt(r.timestamp_s), _fmt(r.temperature_c), _fmt(r.lte_ppm),
                               _fmt(r.tone_ppm), _fmt(r.true_ppm)]))
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_dataset(records, path) -> Path:
    return atomic_write_text(path, format_dataset(records))


def write_csv_table(path, header, rows) -> Path:
    """Small CSV writer for result tables; floats use ``repr`` for stable bytes."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else ("" if v is None else str(v))
                              for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv_table(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def version_string() -> str:
    """``git describe`` of the source checkout when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path, command: str, config: dict, seeds: dict, outputs=()) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "version": version_string(),
        "outputs": sorted(outputs),
    }
    return atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        m = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON manifest ({exc.msg})", exc.lineno) from None
    for key in ("command", "config", "seeds"):
        if key not in m:
            raise DataError(f"{path}: manifest lacks {key!r}")
    return m
