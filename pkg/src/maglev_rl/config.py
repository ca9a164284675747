"""Run configuration and the plain-text key=value config format.

One flat dataclass holds every tunable; builders turn it into the
per-module parameter objects. Config files contain ``key = value`` lines,
``#`` comments and blank lines. Tuple-valued keys take comma-separated values.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .agents import AgentConfig
from .env import CostWeights, EpisodeConfig
from .linctrl import DEFAULT_LQI_Q, DEFAULT_LQI_R, PidGains
from .plant import PlantParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algorithm: str = "td3"
    episodes: int = 300
    steps: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_interval: int = 5000
    eval_episodes: int = 10
    eval_seed: int = 2024
    dataset: str = ""
    dataset_max: int = 10_000
    dataset_period_s: float = 0.0
    out: str = "runs/latest"

    # plant (key names follow the parameter file format)
    mass_kg: float = 700.0
    coil_turns: float = 450.0
    pole_area_m2: float = 0.024
    coil_resistance_ohm: float = 1.2
    permeability: float = 4e-7 * math.pi
    gravity: float = 9.8
    target_gap_m: float = 0.008
    disturbance_variance: float = 2.5e5
    gap_min_m: float = 0.001
    gap_max_m: float = 0.020

    # environment
    dt_s: float = 1e-3
    substeps: int = 1
    rho1: float = 1e6
    rho2: float = 1.0
    rho3: float = 1e-4
    cost_voltage: str = "absolute"
    v_max: float = 200.0
    initial_gap_m: float = 0.015
    reset_gap_min_m: float = 0.003
    reset_gap_max_m: float = 0.015
    terminate_on_violation: bool = False

    # learning
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 100
    buffer_size: int = 1_000_000
    warmup_steps: int = 10_000
    explore_sigma: float = 0.1
    smooth_sigma: float = 0.2
    smooth_clip: float = 0.5
    policy_delay: int = 2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    optimizer: str = "adam"
    obs_scale: tuple[float, float, float] = (0.01, 0.5, 10.0)
    cost_scale: float = 100.0
    batch_norm: bool = True
    bn_placement: str = "input"

    # baselines
    baseline_duration_s: float = 10.0
    kp: float = 3100.0
    ki: float = 300.0
    pid_tau: float = 0.1
    pid_derivative: str = "rate"
    pid_integral_limit: float = 10.0
    lqi_q: tuple[float, ...] = DEFAULT_LQI_Q
    lqi_r: float = DEFAULT_LQI_R
    lqi_integral_limit: float = 1.0
    baseline_v_limit: float = math.inf

    # evaluation rollouts of saved policies
    eval_duration_s: float = 0.5
    steady_fraction: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ("pid", "lqi", "ddpg", "td3"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.eval_interval <= 0:
            raise ConfigError("eval_interval must be > 0")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.episodes < 0 or self.steps < 1:
            raise ConfigError("episodes must be >= 0 and steps >= 1")
        if self.pid_derivative not in ("rate", "difference"):
            raise ConfigError(f"unknown pid_derivative {self.pid_derivative!r}")

    # ---- builders -------------------------------------------------------
    def plant_params(self) -> PlantParams:
        return PlantParams(
            mass_kg=self.mass_kg, coil_turns=self.coil_turns, pole_area_m2=self.pole_area_m2,
            coil_resistance_ohm=self.coil_resistance_ohm, permeability=self.permeability,
            gravity_mps2=self.gravity, target_gap_m=self.target_gap_m,
            disturbance_variance_N2=self.disturbance_variance,
            gap_min_m=self.gap_min_m, gap_max_m=self.gap_max_m)

    def cost_weights(self) -> CostWeights:
        return CostWeights(self.rho1, self.rho2, self.rho3, self.cost_voltage)

    def episode_config(self, reset_mode: str = "randomized", horizon: int | None = None) -> EpisodeConfig:
        return EpisodeConfig(
            horizon_steps=horizon or self.steps, dt_s=self.dt_s, reset_mode=reset_mode,
            initial_gap_m=self.initial_gap_m,
            gap_range_m=(self.reset_gap_min_m, self.reset_gap_max_m),
            gamma=self.gamma, v_max=self.v_max, substeps=self.substeps,
            terminate_on_violation=self.terminate_on_violation)

    def agent_config(self, algorithm: str | None = None) -> AgentConfig:
        algo = algorithm or self.algorithm
        common = dict(
            gamma=self.gamma, tau=self.tau, batch_size=self.batch_size,
            warmup_steps=self.warmup_steps, explore_sigma=self.explore_sigma,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr, optimizer=self.optimizer,
            obs_scale=tuple(self.obs_scale), cost_scale=self.cost_scale,
            batch_norm=self.batch_norm, bn_placement=self.bn_placement)
        if algo == "ddpg":
            return AgentConfig.ddpg(**common)
        if algo == "td3":
            return AgentConfig.td3(smooth_sigma=self.smooth_sigma, smooth_clip=self.smooth_clip,
                                   policy_delay=self.policy_delay, **common)
        raise ConfigError(f"{algo!r} is not a learning algorithm")

    def pid_gains(self) -> PidGains:
        return PidGains(self.kp, self.ki, self.pid_tau)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    default = getattr(RunConfig, name, None)
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    kind = type(default) if default is not None else str
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        elem = int if name == "seeds" else float
        try:
            return tuple(elem(x) for x in raw.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    try:
        return kind(raw) if kind in (int, float) else raw
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _convert(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path:
        values.update(parse_config_text(Path(path).read_text()))
    for key, value in (overrides or {}).items():
        values[key] = _convert(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
