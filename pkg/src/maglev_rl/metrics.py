"""Step-response quality measures for gap traces."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

BAND = 0.02


@dataclass(frozen=True)
class TraceMetrics:
    settling_time_s: float  # nan when the trace never settles
    settled: bool
    overshoot_fraction: float
    steady_state_error_m: float
    episode_return: float

    def as_dict(self) -> dict:
        return asdict(self)


def settling_time(err: np.ndarray, dt: float, band: float = BAND) -> float:
    """First time after which |err| stays within band*|err[0]|; nan if never.

    With zero initial error the band has zero width, so any later deviation
    means the trace is not settled.
    """
    tol = band * abs(err[0])
    outside = np.flatnonzero(np.abs(err) > tol)
    if outside.size == 0:
        return 0.0
    last = outside[-1]
    if last == err.size - 1:
        return math.nan
    return (last + 1) * dt


def overshoot(err: np.ndarray) -> float:
    """Largest excursion past zero on the side opposite err[0], relative to |err[0]|."""
    e0 = err[0]
    if e0 == 0.0:
        return 0.0
    past = -np.sign(e0) * err
    return max(0.0, float(past.max())) / abs(e0)


def steady_state_error(err: np.ndarray, fraction: float = 0.2) -> float:
    n = max(1, int(round(fraction * err.size)))
    return float(np.mean(np.abs(err[-n:])))


def compute_metrics(gap_m, dt: float, x_eq: float, costs=None,
                    steady_fraction: float = 0.2) -> TraceMetrics:
    """Metrics for a uniformly sampled absolute gap trace in metres.

    ``steady_fraction`` is the trailing share of samples averaged for the
    steady-state error. The return is minus the summed cost when costs are given.
    """
    gap = np.asarray(gap_m, dtype=float)
    if gap.ndim != 1 or gap.size == 0:
        raise ValueError("trace must be a non-empty 1-d sequence")
    err = gap - x_eq
    ts = settling_time(err, dt)
    ret = -float(np.sum(costs)) if costs is not None else math.nan
    return TraceMetrics(ts, not math.isnan(ts), overshoot(err),
                        steady_state_error(err, steady_fraction), ret)


def metrics_from_rows(rows: list[dict], x_eq: float, steady_fraction: float = 0.2) -> TraceMetrics:
    """Metrics for rows as produced by ``env.read_trace``."""
    if not rows:
        raise ValueError("empty trace")
    t = np.array([r["time_s"] for r in rows])
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    if t.size > 2 and not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-12):
        raise ValueError("trace time step is not uniform")
    gap = np.array([r["gap_mm"] for r in rows]) * 1e-3
    costs = np.array([r["cost"] for r in rows])
    return compute_metrics(gap, dt, x_eq, costs, steady_fraction)


def mean_metrics(items: list[TraceMetrics]) -> dict:
    """Averages over episodes; settling time is averaged over settled episodes only."""
    settled = [m.settling_time_s for m in items if m.settled]
    return {
        "episodes": len(items),
        "settled": len(settled),
        "settling_time_s": float(np.mean(settled)) if settled else math.nan,
        "overshoot_fraction": float(np.mean([m.overshoot_fraction for m in items])),
        "steady_state_error_m": float(np.mean([m.steady_state_error_m for m in items])),
        "episode_return": float(np.mean([m.episode_return for m in items])),
    }
