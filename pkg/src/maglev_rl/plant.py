"""Nonlinear single-magnet levitation dynamics in deviation coordinates.

State z = (x - x_eq, dx/dt, i - i_eq), input v = u - u_eq. The vertical axis
points from the magnet towards the rail gap, so a positive z1 means the gap is
too wide and gravity pulls it wider still.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import cached_property
from typing import NamedTuple

import numpy as np


class ParameterError(ValueError):
    """Raised for physically invalid plant parameters."""


class SingularityError(ArithmeticError):
    """Raised when the air gap reaches zero and the dynamics blow up."""


@dataclass(frozen=True)
class PlantParams:
    mass_kg: float = 700.0
    coil_turns: float = 450.0
    pole_area_m2: float = 0.024
    coil_resistance_ohm: float = 1.2
    permeability: float = 4e-7 * math.pi
    gravity_mps2: float = 9.8
    target_gap_m: float = 0.008
    disturbance_variance_N2: float = 2.5e5
    gap_min_m: float = 0.001
    gap_max_m: float = 0.020

    def __post_init__(self):
        for name in ("mass_kg", "coil_turns", "pole_area_m2", "permeability",
                     "gravity_mps2", "target_gap_m", "gap_min_m", "gap_max_m"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be finite and > 0, got {value!r}")
        # a lossless coil and a noise-free rail are allowed corner cases
        for name in ("coil_resistance_ohm", "disturbance_variance_N2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if not self.gap_min_m < self.target_gap_m < self.gap_max_m:
            raise ParameterError("target gap must lie strictly inside (gap_min_m, gap_max_m)")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise ParameterError(f"kappa is not finite and positive: {self.kappa!r}")

    @cached_property
    def kappa(self) -> float:
        """4 m g / (mu0 N^2 A), in A^2/m^2."""
        return 4.0 * self.mass_kg * self.gravity_mps2 / (
            self.permeability * self.coil_turns**2 * self.pole_area_m2)

    @cached_property
    def sqrt_kappa(self) -> float:
        return math.sqrt(self.kappa)

    @property
    def i_eq(self) -> float:
        return self.sqrt_kappa * self.target_gap_m

    @property
    def u_eq(self) -> float:
        return self.i_eq * self.coil_resistance_ohm


# key=value config names -> dataclass fields
CONFIG_KEYS = {
    "mass_kg": "mass_kg",
    "coil_turns": "coil_turns",
    "pole_area_m2": "pole_area_m2",
    "coil_resistance_ohm": "coil_resistance_ohm",
    "permeability": "permeability",
    "gravity": "gravity_mps2",
    "target_gap_m": "target_gap_m",
    "disturbance_variance": "disturbance_variance_N2",
    "gap_min_m": "gap_min_m",
    "gap_max_m": "gap_max_m",
}


def params_from_mapping(values: dict[str, str | float]) -> PlantParams:
    """Build PlantParams from config-file keys, ignoring unrelated keys."""
    kwargs = {CONFIG_KEYS[k]: float(v) for k, v in values.items() if k in CONFIG_KEYS}
    return PlantParams(**kwargs)


def params_to_mapping(params: PlantParams) -> dict[str, float]:
    inverse = {v: k for k, v in CONFIG_KEYS.items()}
    return {inverse[f.name]: getattr(params, f.name) for f in fields(params)}


class PlantState(NamedTuple):
    z1_m: float
    z2_mps: float
    z3_A: float


class LinearModel(NamedTuple):
    a_matrix: np.ndarray
    b_vector: np.ndarray
    c_vector: np.ndarray


def equilibrium(params: PlantParams) -> tuple[float, float, float]:
    """Return (x_eq, i_eq, u_eq) where magnetic force balances gravity."""
    return params.target_gap_m, params.i_eq, params.u_eq


def derivative(z, v: float, f: float, params: PlantParams) -> PlantState:
    """Time derivative of the deviation state for voltage deviation v and force f."""
    z1, z2, z3 = z
    x_eq = params.target_gap_m
    gap = z1 + x_eq
    if not gap > 0.0:
        raise SingularityError(f"air gap {gap!r} m is not positive")
    g = params.gravity_mps2
    kappa = params.kappa
    sk = params.sqrt_kappa
    m = params.mass_kg
    gap2 = gap * gap
    dz2 = ((2.0 * x_eq + z1) * z1 * g / gap2
           - (2.0 * sk * x_eq + z3) * z3 * g / (kappa * gap2)
           + f / m)
    dz3 = ((z3 + sk * x_eq) / gap * z2
           + kappa * gap / (2.0 * m * g) * (v - z3 * params.coil_resistance_ohm))
    return PlantState(z2, dz2, dz3)


def derivative_batch(z: np.ndarray, v, f, params: PlantParams) -> np.ndarray:
    """Row-wise ``derivative`` for an (n, 3) array of states."""
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    x_eq = params.target_gap_m
    gap = z1 + x_eq
    if np.any(gap <= 0.0):
        raise SingularityError("air gap is not positive in at least one row")
    g = params.gravity_mps2
    kappa = params.kappa
    sk = params.sqrt_kappa
    m = params.mass_kg
    gap2 = gap * gap
    out = np.empty_like(z)
    out[:, 0] = z2
    out[:, 1] = ((2.0 * x_eq + z1) * z1 * g / gap2
                 - (2.0 * sk * x_eq + z3) * z3 * g / (kappa * gap2)
                 + f / m)
    out[:, 2] = ((z3 + sk * x_eq) / gap * z2
                 + kappa * gap / (2.0 * m * g) * (v - z3 * params.coil_resistance_ohm))
    return out


def euler_step(z, v: float, f: float, dt: float, params: PlantParams) -> PlantState:
    """One unbounded forward-Euler step; no gap clamping."""
    d1, d2, d3 = derivative(z, v, f, params)
    return PlantState(z[0] + dt * d1, z[1] + dt * d2, z[2] + dt * d3)


def step(z, u: float, f: float, dt: float, params: PlantParams,
         substeps: int = 1) -> tuple[PlantState, bool]:
    """Advance by dt with absolute voltage u held constant.

    Returns the new state and a terminal flag. Leaving the gap bounds clamps
    the gap to the violated bound, zeroes the gap rate and sets the flag.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    v = u - params.u_eq
    h = dt / substeps
    lo = params.gap_min_m - params.target_gap_m
    hi = params.gap_max_m - params.target_gap_m
    z = PlantState(*z)
    for _ in range(substeps):
        z = euler_step(z, v, f, h, params)
        if z.z1_m < lo or z.z1_m > hi:
            bound = lo if z.z1_m < lo else hi
            return PlantState(bound, 0.0, z.z3_A), True
    return z, False


def sample_disturbance(rng: np.random.Generator, params: PlantParams) -> float:
    """One disturbance force draw, held for a whole control step."""
    if params.disturbance_variance_N2 == 0.0:
        return 0.0
    return float(rng.normal(0.0, math.sqrt(params.disturbance_variance_N2)))


def linearize(params: PlantParams) -> LinearModel:
    """Closed-form Jacobian of the dynamics at the equilibrium point."""
    g = params.gravity_mps2
    x_eq = params.target_gap_m
    m = params.mass_kg
    kappa = params.kappa
    sk = params.sqrt_kappa
    a = np.array([
        [0.0, 1.0, 0.0],
        [2.0 * g / x_eq, 0.0, -2.0 * g / (sk * x_eq)],
        [0.0, sk, -kappa * x_eq * params.coil_resistance_ohm / (2.0 * m * g)],
    ])
    b = np.array([[0.0], [0.0], [kappa * x_eq / (2.0 * m * g)]])
    c = np.array([[1.0, 0.0, 0.0]])
    return LinearModel(a, b, c)


def simulate_open_loop(z0, u: float, t_end: float, dt: float,
                       params: PlantParams) -> PlantState:
    """Integrate the undisturbed dynamics with constant u by unbounded Euler."""
    n = int(round(t_end / dt))
    v = u - params.u_eq
    z = PlantState(*z0)
    for _ in range(n):
        z = euler_step(z, v, 0.0, dt, params)
    return z
