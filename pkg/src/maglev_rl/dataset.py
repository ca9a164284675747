"""Logged controller trajectories: CSV ingestion, transitions and a balance report.

A log holds absolute measurements, one row per sample. Consecutive rows in the
same segment become one transition; a time jump larger than twice the nominal
sample period, a non-increasing time stamp or a malformed row starts a new
segment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .agents import Transition
from .env import unscale_voltage
from .plant import PlantParams

DATASET_COLUMNS = ("time_s", "gap_m", "gap_rate_mps", "current_A", "voltage_V")


class DatasetError(ValueError):
    pass


class DatasetRow(NamedTuple):
    time_s: float
    gap_m: float
    gap_rate_mps: float
    current_A: float
    voltage_V: float


@dataclass
class Dataset:
    rows: list[DatasetRow]
    transitions: list[Transition]
    period_s: float
    segments: int
    malformed: int
    clipped: int
    histogram: list[tuple[float, float, int]] = field(default_factory=list)

    def report(self) -> str:
        lines = [
            f"rows {len(self.rows)}  transitions {len(self.transitions)}  segments {self.segments}",
            f"sample period {self.period_s:.6g} s  malformed rows skipped {self.malformed}",
            f"actions clipped to the voltage range {self.clipped}",
            "gap error histogram (mm):",
        ]
        total = max(1, sum(n for _, _, n in self.histogram))
        for lo, hi, n in self.histogram:
            bar = "#" * int(round(40 * n / total))
            lines.append(f"  [{lo:+6.1f}, {hi:+6.1f})  {n:7d}  {bar}")
        return "\n".join(lines)


def _parse_row(raw: dict) -> DatasetRow | None:
    try:
        values = [float(raw[k]) for k in DATASET_COLUMNS]
    except (KeyError, TypeError, ValueError):
        return None
    if not all(math.isfinite(v) for v in values):
        return None
    return DatasetRow(*values)


def read_rows(path) -> tuple[list[DatasetRow | None], int]:
    """Rows in file order with None for malformed ones, and the malformed count."""
    out: list[DatasetRow | None] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in DATASET_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"missing columns: {', '.join(missing)}")
        for raw in reader:
            out.append(_parse_row(raw))
    return out, sum(r is None for r in out)


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for r in rows:
            writer.writerow([repr(float(v)) for v in r])


def gap_histogram(gap_err_mm: np.ndarray, width_mm: float = 1.0,
                  lo_mm: float = -7.0, hi_mm: float = 12.0) -> list[tuple[float, float, int]]:
    edges = np.arange(lo_mm, hi_mm + width_mm / 2, width_mm)
    counts, _ = np.histogram(np.clip(gap_err_mm, lo_mm, hi_mm), bins=edges)
    return [(float(a), float(b), int(n)) for a, b, n in zip(edges[:-1], edges[1:], counts)]


def rows_to_state(r: DatasetRow, params: PlantParams) -> np.ndarray:
    return np.array([r.gap_m - params.target_gap_m, r.gap_rate_mps, r.current_A - params.i_eq])


def load_dataset(path, params: PlantParams = PlantParams(), v_max: float = 200.0,
                 period_s: float | None = None) -> Dataset:
    """Parse a log into rows and transitions.

    ``period_s`` is the nominal sample period; by default the median spacing
    of consecutive valid rows. Actions are normalized voltage deviations
    clipped to [-1, 1]; transitions are never terminal.
    """
    raw, malformed = read_rows(path)
    rows = [r for r in raw if r is not None]
    if len(rows) < 2:
        raise DatasetError(f"{path}: fewer than two valid rows")
    if period_s is None or period_s <= 0:
        steps = np.diff([r.time_s for r in rows])
        steps = steps[steps > 0]
        if steps.size == 0:
            raise DatasetError(f"{path}: time stamps never increase")
        period_s = float(np.median(steps))
    u_eq = params.u_eq
    transitions = []
    clipped = 0
    segments = 0
    in_segment = False
    for prev, cur in zip(raw[:-1], raw[1:]):
        ok = (prev is not None and cur is not None
              and 0.0 < cur.time_s - prev.time_s <= 2.0 * period_s)
        if not ok:
            in_segment = False
            continue
        if not in_segment:
            segments += 1
            in_segment = True
        a = unscale_voltage(prev.voltage_V, u_eq, v_max)
        if abs(a) > 1.0:
            clipped += 1
        transitions.append(Transition(rows_to_state(prev, params), float(np.clip(a, -1.0, 1.0)),
                                      0.0, rows_to_state(cur, params), False))
    if not transitions:
        raise DatasetError(f"{path}: no consecutive rows form a transition")
    err_mm = np.array([(r.gap_m - params.target_gap_m) * 1e3 for r in rows])
    return Dataset(rows, transitions, period_s, segments, malformed, clipped, gap_histogram(err_mm))
