"""Episodic MDP wrapper around the levitation plant.

Observations are the plant deviation state itself. Actions are normalized to
[-1, 1] and mapped affinely onto the coil voltage around u_eq.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import plant
from .plant import PlantParams, PlantState


class LifecycleError(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


@dataclass(frozen=True)
class CostWeights:
    rho1: float = 1e6
    rho2: float = 1.0
    rho3: float = 1e-4
    # "absolute" penalizes u, "deviation" penalizes v = u - u_eq
    voltage: str = "absolute"

    def __post_init__(self):
        if not (self.rho1 > 0 and self.rho2 > 0 and self.rho3 > 0):
            raise ValueError("cost weights must be strictly positive")
        if self.voltage not in ("absolute", "deviation"):
            raise ValueError(f"unknown voltage mode {self.voltage!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    horizon_steps: int = 500
    dt_s: float = 1e-3
    reset_mode: str = "randomized"
    initial_gap_m: float = 0.015
    gap_range_m: tuple[float, float] = (0.003, 0.015)
    gamma: float = 0.99
    v_max: float = 200.0
    substeps: int = 1
    # False: a gap-bound contact clamps the state and the episode goes on
    terminate_on_violation: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.reset_mode not in ("fixed", "randomized"):
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")
        if not self.dt_s > 0 or not self.v_max > 0 or self.substeps < 1:
            raise ValueError("dt_s, v_max must be > 0 and substeps >= 1")


def cost(s, u: float, weights: CostWeights = CostWeights(), u_eq: float = 0.0) -> float:
    """Quadratic one-step cost on gap error, gap rate and coil voltage.

    ``u`` is the absolute voltage; ``u_eq`` is only used in deviation mode.
    The current error s[2] does not enter the cost.
    """
    if weights.voltage == "deviation":
        u = u - u_eq
    return weights.rho1 * s[0] * s[0] + weights.rho2 * s[1] * s[1] + weights.rho3 * u * u


def scale_action(a, u_eq: float, v_max: float):
    """Map a normalized action in [-1, 1] to an absolute voltage."""
    return u_eq + np.clip(a, -1.0, 1.0) * v_max


def unscale_voltage(u, u_eq: float, v_max: float):
    """Inverse of scale_action without clipping."""
    return (u - u_eq) / v_max


def reset_state(rng: np.random.Generator, cfg: EpisodeConfig, params: PlantParams) -> np.ndarray:
    if cfg.reset_mode == "fixed":
        gap = cfg.initial_gap_m
    else:
        lo, hi = cfg.gap_range_m
        gap = rng.uniform(lo, hi)
    return np.array([gap - params.target_gap_m, 0.0, 0.0])


class MaglevEnv:
    """Single levitation magnet as an episodic cost-minimization task.

    ``step`` returns ``(obs, cost, terminal)``. The episode ends at the
    horizon, or at a gap-bound violation when ``terminate_on_violation`` is
    set; ``bound_violated`` reports the contact either way.
    """

    def __init__(self, params: PlantParams = PlantParams(),
                 weights: CostWeights = CostWeights(),
                 cfg: EpisodeConfig = EpisodeConfig(),
                 seed: int | None = None):
        self.params = params
        self.weights = weights
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.u_eq = params.u_eq
        self._state: np.ndarray | None = None
        self.steps = 0
        self.done = True
        self.bound_violated = False
        self.contacts = 0

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    def reset(self, state=None) -> np.ndarray:
        if state is None:
            self._state = reset_state(self.rng, self.cfg, self.params)
        else:
            self._state = np.array(state, dtype=float)
        self.steps = 0
        self.done = False
        self.bound_violated = False
        self.contacts = 0
        return self._state.copy()

    def voltage(self, a: float) -> float:
        return float(scale_action(a, self.u_eq, self.cfg.v_max))

    def step(self, a: float) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise LifecycleError("episode has ended; call reset()")
        s = self._state
        u = self.voltage(a)
        c = cost(s, u, self.weights, self.u_eq)
        f = plant.sample_disturbance(self.rng, self.params)
        z, violated = plant.step(s, u, f, self.cfg.dt_s, self.params, self.cfg.substeps)
        self._state = np.array(z)
        self.steps += 1
        self.bound_violated = violated
        self.contacts += violated
        self.done = ((violated and self.cfg.terminate_on_violation)
                     or self.steps >= self.cfg.horizon_steps)
        return self._state.copy(), c, self.done


class BatchEnv:
    """Vectorized copies of MaglevEnv sharing one RNG; used for evaluation rollouts."""

    def __init__(self, n: int, params: PlantParams, weights: CostWeights,
                 cfg: EpisodeConfig, seed: int | None = None):
        self.n = n
        self.params = params
        self.weights = weights
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.u_eq = params.u_eq

    def reset(self, state=None) -> np.ndarray:
        if state is None:
            rows = [reset_state(self.rng, self.cfg, self.params) for _ in range(self.n)]
            self.z = np.array(rows)
        else:
            self.z = np.tile(np.asarray(state, dtype=float), (self.n, 1))
        self.alive = np.ones(self.n, dtype=bool)
        return self.z.copy()

    def step(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance all live copies; dead copies are frozen and cost nothing."""
        p = self.params
        z = self.z
        u = scale_action(np.asarray(a, dtype=float).reshape(self.n), self.u_eq, self.cfg.v_max)
        w = self.weights
        uc = u - self.u_eq if w.voltage == "deviation" else u
        c = w.rho1 * z[:, 0] ** 2 + w.rho2 * z[:, 1] ** 2 + w.rho3 * uc ** 2
        c = np.where(self.alive, c, 0.0)
        std = np.sqrt(p.disturbance_variance_N2)
        f = self.rng.normal(0.0, std, self.n) if std > 0 else np.zeros(self.n)
        lo = p.gap_min_m - p.target_gap_m
        hi = p.gap_max_m - p.target_gap_m
        h = self.cfg.dt_s / self.cfg.substeps
        violated = np.zeros(self.n, dtype=bool)
        for _ in range(self.cfg.substeps):
            d = plant.derivative_batch(z, u - self.u_eq, f, p)
            z = np.where(self.alive[:, None] & ~violated[:, None], z + h * d, z)
            out = (z[:, 0] < lo) | (z[:, 0] > hi)
            new = out & ~violated
            if new.any():
                z[new, 0] = np.clip(z[new, 0], lo, hi)
                z[new, 1] = 0.0
            violated |= out
        violated &= self.alive
        self.z = z
        if self.cfg.terminate_on_violation:
            self.alive = self.alive & ~violated
        return z.copy(), c, violated


TRACE_COLUMNS = ("step", "time_s", "gap_mm", "gap_rate", "current_A", "voltage_V", "cost", "terminal")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_trace(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})


def read_trace(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {k: float(row[k]) for k in TRACE_COLUMNS[1:-1]}
            rec = {"step": int(row["step"]), **rec,
                   "terminal": row["terminal"] in ("1", "True", "true")}
            out.append(rec)
    return out


def trace_row(k: int, dt: float, s, u: float, c: float, terminal: bool,
              params: PlantParams) -> dict:
    """One CSV row; ``s`` is the state at time k*dt (before the action)."""
    return {
        "step": k,
        "time_s": k * dt,
        "gap_mm": (float(s[0]) + params.target_gap_m) * 1e3,
        "gap_rate": float(s[1]),
        "current_A": float(s[2]) + params.i_eq,
        "voltage_V": float(u),
        "cost": float(c),
        "terminal": bool(terminal),
    }
