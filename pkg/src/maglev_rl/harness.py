"""Orchestration: baseline runs, training, evaluation and artifact layout.

Run directory layout::

    <out>/config.txt          snapshot of the resolved configuration
    <out>/summary.txt         JSON summary of the run
    <out>/seed_<n>/...        per-seed traces, curves and checkpoints
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import dataset as ds
from . import plant
from .agents import Agent, Policy, ReplayBuffer, seed_from_dataset
from .config import RunConfig, format_config
from .env import BatchEnv, MaglevEnv, cost, trace_row, write_trace
from .linctrl import LqiState, PidState, lqi_control, lqi_gain, pid_control
from .metrics import TraceMetrics, compute_metrics, mean_metrics
from .plant import PlantParams

AGENT_SEED_OFFSET = 10_000
CURVE_COLUMNS = ("env_step", "episode", "eval_return", "eval_sse_m")
DIAG_COLUMNS = ("iteration", "episode", "env_step", "td_error", "actor_grad_norm",
                "critic_grad_norm", "eval_return")


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------- baselines

def make_controller(cfg: RunConfig, params: PlantParams) -> Callable[[np.ndarray], float]:
    """Return a stateful closure mapping the deviation state to an absolute voltage."""
    dt = cfg.dt_s
    u_eq = params.u_eq
    lim = cfg.baseline_v_limit
    if cfg.algorithm == "pid":
        gains = cfg.pid_gains()
        state = PidState(integral_limit=cfg.pid_integral_limit)
        use_rate = cfg.pid_derivative == "rate"

        def control(z):
            v, _ = pid_control(gains, state, z[0], dt, z[1] if use_rate else None)
            return u_eq + min(max(v, -lim), lim)
        return control
    if cfg.algorithm == "lqi":
        gain = lqi_gain(plant.linearize(params), np.diag(cfg.lqi_q), cfg.lqi_r)
        integ = LqiState(limit=cfg.lqi_integral_limit)

        def control(z):
            v = lqi_control(gain, z, integ.eps)
            integ.update(z[0], dt)
            return u_eq + min(max(v, -lim), lim)
        return control
    raise HarnessError(f"{cfg.algorithm!r} is not a baseline controller")


def simulate_controller(cfg: RunConfig, controller, seed: int, z0=None,
                        duration_s: float | None = None) -> list[dict]:
    """Closed nonlinear loop; a gap-bound contact clamps the state and the run goes on."""
    params = cfg.plant_params()
    weights = cfg.cost_weights()
    rng = np.random.default_rng(seed)
    dt = cfg.dt_s
    n = int(round((duration_s or cfg.baseline_duration_s) / dt))
    z = np.array(z0 if z0 is not None else [cfg.initial_gap_m - params.target_gap_m, 0.0, 0.0])
    rows = []
    for k in range(n):
        u = controller(z)
        c = cost(z, u, weights, params.u_eq)
        f = plant.sample_disturbance(rng, params)
        z_next, violated = plant.step(z, u, f, dt, params, cfg.substeps)
        rows.append(trace_row(k, dt, z, u, c, violated, params))
        z = np.array(z_next)
    return rows


def trace_metrics(rows: list[dict], cfg: RunConfig, x_eq: float) -> TraceMetrics:
    gap = np.array([r["gap_mm"] for r in rows]) * 1e-3
    costs = np.array([r["cost"] for r in rows])
    return compute_metrics(gap, cfg.dt_s, x_eq, costs, cfg.steady_fraction)


def run_baseline(cfg: RunConfig, seed: int | None = None, out: str | Path | None = None):
    """Simulate a PID or LQI loop; returns (trace rows, metrics) and writes them under ``out``."""
    if cfg.algorithm not in ("pid", "lqi"):
        raise HarnessError("run_baseline needs algorithm pid or lqi")
    params = cfg.plant_params()
    seed = cfg.seeds[0] if seed is None else seed
    rows = simulate_controller(cfg, make_controller(cfg, params), seed)
    m = trace_metrics(rows, cfg, params.target_gap_m)
    if out is not None:
        d = Path(out) / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_trace(d / "trace.csv", rows)
        (d / "metrics.txt").write_text(json.dumps(m.as_dict(), indent=2) + "\n")
    return rows, m


def generate_controller_log(cfg: RunConfig, path, n_transitions: int, seed: int = 0,
                            episode_s: float = 0.5) -> int:
    """Write a DatasetRow CSV of closed-loop baseline runs from randomized start gaps.

    Rows are logged at the simulation step; runs are separated by a time jump
    so they load as separate segments. Returns the number of transitions.
    """
    params = cfg.plant_params()
    rng = np.random.default_rng(seed)
    per_run = int(round(episode_s / cfg.dt_s))
    rows = []
    t0 = 0.0
    made = 0
    while made < n_transitions:
        gap0 = rng.uniform(cfg.reset_gap_min_m, cfg.reset_gap_max_m)
        z0 = [gap0 - params.target_gap_m, 0.0, 0.0]
        steps = min(per_run, n_transitions - made) + 1
        trace = simulate_controller(cfg, make_controller(cfg, params), int(rng.integers(2**31)),
                                    z0, steps * cfg.dt_s)
        for r in trace:
            rows.append((t0 + r["time_s"], r["gap_mm"] * 1e-3, r["gap_rate"],
                         r["current_A"], r["voltage_V"]))
        made += len(trace) - 1
        t0 += len(trace) * cfg.dt_s + 1.0
    ds.write_rows(path, rows)
    return made


# ---------------------------------------------------------------- evaluation

def rollout(policy: Callable, cfg: RunConfig, n_episodes: int, n_steps: int, seed: int):
    """Noise-free batched rollouts from the fixed start gap.

    Returns (states (n_steps+1, n, 3), actions (n_steps, n), costs (n_steps, n),
    violations (n_steps, n)).
    """
    params = cfg.plant_params()
    env = BatchEnv(n_episodes, params, cfg.cost_weights(),
                   cfg.episode_config("fixed", n_steps), seed)
    z = env.reset([cfg.initial_gap_m - params.target_gap_m, 0.0, 0.0])
    zs = [z]
    acts, costs, viol = [], [], []
    for _ in range(n_steps):
        a = np.asarray(policy(z), dtype=float).reshape(n_episodes)
        z, c, v = env.step(a)
        zs.append(z)
        acts.append(a)
        costs.append(c)
        viol.append(v)
    return np.array(zs), np.array(acts), np.array(costs), np.array(viol)


def eval_return(policy, cfg: RunConfig) -> tuple[float, float]:
    """Mean negated cost sum over the evaluation episodes, and mean final-window gap error."""
    zs, _, costs, _ = rollout(policy, cfg, cfg.eval_episodes, cfg.steps, cfg.eval_seed)
    n = max(1, int(round(cfg.steady_fraction * cfg.steps)))
    sse = float(np.mean(np.abs(zs[-n:, :, 0])))
    return -float(costs.sum(axis=0).mean()), sse


def evaluate(checkpoint, cfg: RunConfig, duration_s: float | None = None,
             episodes: int | None = None, seed: int | None = None, out=None):
    """Roll out a saved policy without exploration noise.

    Returns (mean metrics dict, per-episode TraceMetrics, traces, actions).
    """
    policy = Policy.load(checkpoint)
    params = cfg.plant_params()
    n = episodes or cfg.eval_episodes
    steps = int(round((duration_s or cfg.eval_duration_s) / cfg.dt_s))
    zs, acts, costs, viol = rollout(policy, cfg, n, steps, cfg.eval_seed if seed is None else seed)
    per_episode = []
    traces = []
    for e in range(n):
        u = params.u_eq + np.clip(acts[:, e], -1.0, 1.0) * cfg.v_max
        rows = [trace_row(k, cfg.dt_s, zs[k, e], u[k], costs[k, e], viol[k, e], params)
                for k in range(steps)]
        traces.append(rows)
        per_episode.append(trace_metrics(rows, cfg, params.target_gap_m))
    summary = mean_metrics(per_episode)
    if out is not None:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        for e, rows in enumerate(traces):
            write_trace(d / f"eval_trace_{e}.csv", rows)
        (d / "eval_metrics.txt").write_text(json.dumps(
            {"mean": summary, "episodes": [m.as_dict() for m in per_episode]}, indent=2) + "\n")
    return summary, per_episode, traces, {"states": zs, "actions": acts}


# ---------------------------------------------------------------- training

@dataclass
class SeedResult:
    seed: int
    curve: list[dict] = field(default_factory=list)
    best_return: float = -math.inf
    best_step: int = 0
    checkpoint_dir: Path | None = None
    seeded: int = 0

    @property
    def final_return(self) -> float:
        return self.curve[-1]["eval_return"]

    def first_after(self, step: int) -> dict:
        for row in self.curve:
            if row["env_step"] >= step:
                return row
        return self.curve[-1]

    def steps_to_reach(self, target: float) -> int | None:
        for row in self.curve:
            if row["eval_return"] >= target:
                return row["env_step"]
        return None


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"env_step": int(r["env_step"]), "episode": int(r["episode"]),
                 "eval_return": float(r["eval_return"]), "eval_sse_m": float(r["eval_sse_m"])}
                for r in csv.DictReader(fh)]


def train_seed(cfg: RunConfig, seed: int, out: Path | None,
               transitions: list | None = None, log: Callable[[str], None] | None = None) -> SeedResult:
    params = cfg.plant_params()
    weights = cfg.cost_weights()
    env = MaglevEnv(params, weights, cfg.episode_config("randomized"), seed=seed)
    agent = Agent(cfg.agent_config(), seed=seed + AGENT_SEED_OFFSET)
    total = cfg.episodes * cfg.steps
    buffer = ReplayBuffer(max(1, min(cfg.buffer_size, total + cfg.dataset_max)))
    res = SeedResult(seed)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.checkpoint_dir = out
    if transitions:
        gap_bounds = (params.gap_min_m, params.gap_max_m)
        res.seeded, skipped = seed_from_dataset(buffer, transitions, weights, params.u_eq, cfg.v_max,
                                                cfg.dataset_max, gap_bounds, params.target_gap_m)
        if log:
            log(f"seed {seed}: replay seeded with {res.seeded} transitions ({skipped} skipped)")
    diag_rows = []
    pending: list[dict] = []

    def checkpoint_eval(episode: int) -> None:
        ret, sse = eval_return(agent.policy, cfg)
        step = agent.total_steps
        res.curve.append({"env_step": step, "episode": episode, "eval_return": ret, "eval_sse_m": sse})
        keys = ("td_error", "actor_grad_norm", "critic_grad_norm")
        avg = {}
        for k in keys:
            vals = [d[k] for d in pending if math.isfinite(d[k])]
            avg[k] = float(np.mean(vals)) if vals else math.nan
        diag_rows.append({"iteration": agent.iteration, "episode": episode, "env_step": step,
                          **avg, "eval_return": ret})
        pending.clear()
        if ret > res.best_return:
            res.best_return, res.best_step = ret, step
            if out is not None:
                agent.save(out / "best.npz", {"env_step": step, "eval_return": ret})
        if log:
            log(f"seed {seed} step {step:7d} episode {episode:4d} return {ret:12.2f} "
                f"sse {sse * 1e3:7.3f} mm")

    if out is not None:
        agent.save(out / "initial.npz", {"env_step": 0})
    checkpoint_eval(0)
    for episode in range(1, cfg.episodes + 1):
        s = env.reset()
        done = False
        while not done:
            a = agent.select_action(s)
            s2, c, done = env.step(a)
            terminal = env.bound_violated and cfg.terminate_on_violation
            buffer.push(s, a, c, s2, terminal)
            s = s2
            agent.total_steps += 1
            if agent.total_steps >= cfg.warmup_steps:
                d = agent.update(buffer)
                if d is not None:
                    pending.append(d)
            if agent.total_steps % cfg.eval_interval == 0:
                checkpoint_eval(episode)
    if res.curve[-1]["env_step"] != agent.total_steps:
        checkpoint_eval(cfg.episodes)
    if out is not None:
        agent.save(out / "final.npz", {"env_step": agent.total_steps})
        _write_csv(out / "curve.csv", CURVE_COLUMNS, res.curve)
        _write_csv(out / "diagnostics.csv", DIAG_COLUMNS, diag_rows)
    return res


def load_transitions(cfg: RunConfig):
    data = ds.load_dataset(cfg.dataset, cfg.plant_params(), cfg.v_max, cfg.dataset_period_s or None)
    return data


def train(cfg: RunConfig, out=None, log: Callable[[str], None] | None = print) -> list[SeedResult]:
    """Train one agent per seed; the dataset, if any, is loaded before any training starts."""
    if cfg.algorithm not in ("ddpg", "td3"):
        raise HarnessError("train needs algorithm ddpg or td3")
    transitions = None
    if cfg.dataset:
        data = load_transitions(cfg)
        transitions = data.transitions
        if log:
            log(data.report())
    root = Path(out) if out is not None else None
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.txt").write_text(format_config(cfg))
    results = []
    for seed in cfg.seeds:
        d = root / f"seed_{seed}" if root is not None else None
        results.append(train_seed(cfg, seed, d, transitions, log))
    if root is not None:
        summary = {"algorithm": cfg.algorithm, "seeds": [
            {"seed": r.seed, "best_return": r.best_return, "best_step": r.best_step,
             "final_return": r.final_return, "seeded_transitions": r.seeded} for r in results]}
        (root / "summary.txt").write_text(json.dumps(summary, indent=2) + "\n")
    return results
