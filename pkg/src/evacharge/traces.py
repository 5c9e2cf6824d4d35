"""CSV trace files: per-step station rows, per-step truck rows, run summaries.

Files are UTF-8 with LF line endings.  Floats are written with ``repr`` so a
reloaded trace reproduces every metric bit for bit.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .simulator import EpisodeResult

STATION_HEADER = ["time_min", "station_id", "queue", "risk", "chargers", "serving_mcts"]
TRUCK_HEADER = ["time_min", "truck_id", "phase", "node", "edge", "capability_kwh"]
SUMMARY_HEADER = ["scenario", "policy", "seed", "fleet", "are", "psre", "asre_l", "total_risk", "n_evac"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write(path: str | Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def station_rows(res: EpisodeResult):
    T, F = res.queue.shape
    for s in range(T):
        for i in range(F):
            yield (float(res.time_min[s]), i, int(res.queue[s, i]), float(res.risk[s, i]), int(res.chargers[s, i]), int(res.serving[s, i]))


def write_station_trace(path: str | Path, res: EpisodeResult) -> None:
    _write(path, STATION_HEADER, station_rows(res))


def write_truck_trace(path: str | Path, res: EpisodeResult) -> None:
    _write(path, TRUCK_HEADER, res.truck_log)


def write_summary(path: str | Path, rows) -> None:
    _write(path, SUMMARY_HEADER, rows)


def write_rows(path: str | Path, header: list[str], rows) -> None:
    _write(path, header, rows)


def read_station_trace(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (time_min, queue, risk, chargers, serving) with (T, F) arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != STATION_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = list(r)
    if not rows:
        z = np.zeros((0, 0))
        return np.zeros(0), z, z, z, z
    F = max(int(row[1]) for row in rows) + 1
    T = len(rows) // F
    if T * F != len(rows):
        raise ValueError("ragged station trace")
    time = np.array([float(rows[s * F][0]) for s in range(T)])
    cols = [np.array([row[j] for row in rows]).reshape(T, F) for j in (2, 3, 4, 5)]
    return time, cols[0].astype(np.int64), cols[1].astype(np.float64), cols[2].astype(np.int64), cols[3].astype(np.int64)
