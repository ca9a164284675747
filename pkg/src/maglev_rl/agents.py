"""Experience replay and the DDPG / TD3 learners under cost minimization.

Both algorithms share one class: DDPG is one critic with policy delay 1 and
no target smoothing, TD3 is two critics bootstrapped through their maximum
(the pessimistic estimate when values are costs), target-action smoothing
and a delayed actor/target update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from . import nn
from .env import CostWeights, cost as env_cost
from .nn import Actor, Critic, OptimizerState


class Transition(NamedTuple):
    s: np.ndarray
    u: float
    c: float
    s2: np.ndarray
    terminal: bool


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling with replacement."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, 3))
        self.u = np.zeros(capacity)
        self.c = np.zeros(capacity)
        self.s2 = np.zeros((capacity, 3))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, u: float, c: float, s2, terminal: bool) -> None:
        i = self.cursor
        self.s[i] = s
        self.u[i] = u
        self.c[i] = c
        self.s2[i] = s2
        self.terminal[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.integers(0, self.size, size=batch)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = self.sample_indices(rng, batch)
        return self.s[idx], self.u[idx], self.c[idx], self.s2[idx], self.terminal[idx]

    def contents(self) -> list[Transition]:
        """Stored transitions from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.s[i].copy(), float(self.u[i]), float(self.c[i]),
                           self.s2[i].copy(), bool(self.terminal[i])) for i in order]


def replay_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t.s, t.u, t.c, t.s2, t.terminal)


def seed_from_dataset(buffer: ReplayBuffer, transitions: Iterable, weights: CostWeights,
                      u_eq: float, v_max: float, max_count: int = 10_000,
                      gap_bounds: tuple[float, float] | None = None,
                      x_eq: float | None = None) -> tuple[int, int]:
    """Pre-fill the buffer from logged transitions before training.

    Costs are recomputed from (s, u) with the environment cost so logged and
    simulated experiences share one scale. Rows with non-finite fields or a
    gap outside ``gap_bounds`` are skipped. Returns (inserted, skipped).
    """
    inserted = skipped = 0
    for t in transitions:
        if inserted >= max_count:
            break
        s = np.asarray(t.s, dtype=float)
        s2 = np.asarray(t.s2, dtype=float)
        ok = (s.shape == (3,) and s2.shape == (3,) and np.all(np.isfinite(s))
              and np.all(np.isfinite(s2)) and math.isfinite(t.u))
        if ok and gap_bounds is not None:
            lo, hi = gap_bounds
            ok = all(lo <= z + x_eq <= hi for z in (s[0], s2[0]))
        if not ok:
            skipped += 1
            continue
        u_volts = u_eq + float(np.clip(t.u, -1.0, 1.0)) * v_max
        c = env_cost(s, u_volts, weights, u_eq)
        buffer.push(s, float(np.clip(t.u, -1.0, 1.0)), c, s2, bool(t.terminal))
        inserted += 1
    return inserted, skipped


@dataclass(frozen=True)
class AgentConfig:
    algorithm: str = "td3"
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 100
    warmup_steps: int = 10_000
    explore_sigma: float = 0.1
    smooth_sigma: float = 0.2
    smooth_clip: float = 0.5
    policy_delay: int = 2
    n_critics: int = 2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    optimizer: str = "adam"
    # fixed per-component divisors applied to observations before the networks
    obs_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # costs are divided by this before they enter the TD target
    cost_scale: float = 1.0
    batch_norm: bool = True
    bn_placement: str = "input"
    hidden: int = nn.HIDDEN

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not self.smooth_clip > 0:
            raise ValueError("smooth_clip must be > 0")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.n_critics not in (1, 2):
            raise ValueError("n_critics must be 1 or 2")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    @classmethod
    def ddpg(cls, **kw) -> "AgentConfig":
        base = dict(algorithm="ddpg", n_critics=1, policy_delay=1, smooth_sigma=0.0)
        base.update(kw)
        return cls(**base)

    @classmethod
    def td3(cls, **kw) -> "AgentConfig":
        return cls(**kw)


def ddpg_target(c, s2, terminal, target_actor: Actor, target_critic: Critic, gamma: float) -> np.ndarray:
    """y = c + gamma * q'(s', mu'(s')), with no bootstrap past a terminal."""
    c = np.asarray(c, dtype=float)
    a2 = target_actor.forward(s2, train=False)
    q2 = target_critic.forward(s2, a2)
    return np.where(terminal, c, c + gamma * q2)


def smoothing_noise(rng: np.random.Generator, n: int, sigma: float, clip: float) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(n)
    return np.clip(rng.normal(0.0, sigma, n), -clip, clip)


def td3_target(c, s2, terminal, target_actor: Actor, target_critics, gamma: float,
               sigma: float, clip: float, rng: np.random.Generator) -> np.ndarray:
    """y = c + gamma * max_i q'_i(s', clip(mu'(s') + eps, -1, 1)), eps ~ clip(N(0, sigma), -l, l)."""
    c = np.asarray(c, dtype=float)
    a2 = target_actor.forward(s2, train=False)
    a2 = np.clip(a2 + smoothing_noise(rng, a2.size, sigma, clip), -1.0, 1.0)
    q2 = np.max([tc.forward(s2, a2) for tc in target_critics], axis=0)
    return np.where(terminal, c, c + gamma * q2)


class Agent:
    """Actor-critic learner; the configuration decides DDPG or TD3 behaviour."""

    def __init__(self, cfg: AgentConfig = AgentConfig(), seed: int | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.actor = Actor(cfg.hidden, cfg.batch_norm, cfg.bn_placement).init(self.rng)
        self.critics = [Critic(cfg.hidden).init(self.rng) for _ in range(cfg.n_critics)]
        self.target_actor = self.actor.copy()
        self.target_critics = [c.copy() for c in self.critics]
        self.actor_opt = OptimizerState(cfg.actor_lr, cfg.optimizer)
        self.critic_opts = [OptimizerState(cfg.critic_lr, cfg.optimizer) for _ in self.critics]
        self.iteration = 0
        self.actor_updates = 0
        self.total_steps = 0
        self._obs_div = np.asarray(cfg.obs_scale, dtype=float)

    def prep(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float) / self._obs_div

    def policy(self, s) -> np.ndarray:
        """Eval-mode actor output for raw observations, shape (B,)."""
        return self.actor.forward(self.prep(np.atleast_2d(s)), train=False)

    def select_action(self, s, explore: bool = True) -> float:
        """Uniform during warmup; actor plus Gaussian noise after; actor alone if not exploring."""
        if explore and self.total_steps < self.cfg.warmup_steps:
            return float(self.rng.uniform(-1.0, 1.0))
        a = float(self.policy(s)[0])
        if explore and self.cfg.explore_sigma > 0:
            a = float(np.clip(a + self.rng.normal(0.0, self.cfg.explore_sigma), -1.0, 1.0))
        return a

    def targets(self, c, s2, terminal) -> np.ndarray:
        cfg = self.cfg
        if cfg.n_critics == 1:
            return ddpg_target(c, s2, terminal, self.target_actor, self.target_critics[0], cfg.gamma)
        return td3_target(c, s2, terminal, self.target_actor, self.target_critics, cfg.gamma,
                          cfg.smooth_sigma, cfg.smooth_clip, self.rng)

    def update(self, buffer: ReplayBuffer) -> dict | None:
        """One training iteration; returns diagnostics, or None if the buffer is too small."""
        cfg = self.cfg
        if len(buffer) < cfg.batch_size:
            return None
        self.iteration += 1
        s, u, c, s2, terminal = buffer.sample(self.rng, cfg.batch_size)
        s = self.prep(s)
        s2 = self.prep(s2)
        c = c / cfg.cost_scale
        y = self.targets(c, s2, terminal)
        direction = "ascend" if cfg.optimizer == "plain" else "descend"
        td_abs = 0.0
        critic_norm = 0.0
        for critic, opt in zip(self.critics, self.critic_opts):
            q = critic.forward(s, u)
            delta = y - q
            grad, _ = critic.backward(delta / delta.size)
            # the literal rule is omega += alpha * grad; adaptive mode minimizes the squared TD error
            if direction == "descend":
                grad = -grad
            nn.optimizer_step(critic.params, grad, opt, direction)
            td_abs += float(np.mean(np.abs(delta)))
            critic_norm += float(np.linalg.norm(grad))
        diag = {"iteration": self.iteration, "td_error": td_abs / len(self.critics),
                "critic_grad_norm": critic_norm / len(self.critics), "actor_grad_norm": float("nan")}
        if self.iteration % cfg.policy_delay == 0:
            a = self.actor.forward(s, train=True)
            dq_du = nn.critic_grad_action(self.critics[0], s, a)
            grad = self.actor.backward(dq_du / dq_du.size)
            nn.optimizer_step(self.actor.params, grad, self.actor_opt, "descend")
            self.actor_updates += 1
            diag["actor_grad_norm"] = float(np.linalg.norm(grad))
            nn.soft_update(self.target_actor, self.actor, cfg.tau)
            for tc, oc in zip(self.target_critics, self.critics):
                nn.soft_update(tc, oc, cfg.tau)
        return diag

    def networks(self) -> dict:
        nets = {"actor": self.actor, "target_actor": self.target_actor}
        for i, (c, tc) in enumerate(zip(self.critics, self.target_critics), 1):
            nets[f"critic{i}"] = c
            nets[f"target_critic{i}"] = tc
        return nets

    def save(self, path, meta: dict | None = None) -> None:
        opts = {"actor": self.actor_opt}
        opts.update({f"critic{i}": o for i, o in enumerate(self.critic_opts, 1)})
        info = {"obs_scale": list(self.cfg.obs_scale), "algorithm": self.cfg.algorithm}
        info.update(meta or {})
        nn.save_networks(path, self.networks(), opts, info)


class Policy:
    """Deterministic eval-mode policy restored from a checkpoint."""

    def __init__(self, actor: Actor, obs_scale):
        self.actor = actor
        self._div = np.asarray(obs_scale, dtype=float)

    def __call__(self, s) -> np.ndarray:
        return self.actor.forward(np.atleast_2d(s) / self._div, train=False)

    @classmethod
    def load(cls, path, expect_actor: dict | None = None) -> "Policy":
        expect = {"actor": expect_actor} if expect_actor else None
        nets, _, meta = nn.load_networks(path, expect)
        if "actor" not in nets:
            raise nn.StructureError("checkpoint has no actor")
        return cls(nets["actor"], meta.get("obs_scale", (1.0, 1.0, 1.0)))


def with_overrides(cfg: AgentConfig, **kw) -> AgentConfig:
    return replace(cfg, **kw)
