"""Small fixed-architecture MLPs with hand-written backpropagation.

Every network keeps its trainable parameters in one flat float64 vector
(``net.params``) and batch-norm running statistics in another
(``net.stats``); named views into both are exposed through ``net[name]``.
Keeping them flat makes soft target updates and optimizer steps single
vector operations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HIDDEN = 40
STATE_DIM = 3
ACTION_DIM = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.99
CHECKPOINT_VERSION = 1


class ModeError(ValueError):
    """Train-mode batch normalization needs at least two rows."""


class StructureError(ValueError):
    """Shapes or architectures do not match."""


class _Layout:
    def __init__(self, entries):
        self.slices = {}
        offset = 0
        for name, shape in entries:
            size = int(np.prod(shape))
            self.slices[name] = (offset, offset + size, shape)
            offset += size
        self.size = offset

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {name: flat[a:b].reshape(shape) for name, (a, b, shape) in self.slices.items()}


class Network:
    """Base class: flat parameter/statistics storage and named views."""

    kind = "base"

    def __init__(self, param_entries, stat_entries=()):
        self._playout = _Layout(param_entries)
        self._slayout = _Layout(stat_entries)
        self.params = np.zeros(self._playout.size)
        self.stats = np.zeros(self._slayout.size)
        self._bind()

    def _bind(self):
        self.p = self._playout.views(self.params)
        self.s = self._slayout.views(self.stats)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.p[name] if name in self.p else self.s[name]

    @property
    def param_names(self) -> list[str]:
        return list(self.p)

    def grad_views(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        return self._playout.views(grad)

    def set_flat(self, params: np.ndarray, stats: np.ndarray | None = None) -> None:
        if params.shape != self.params.shape:
            raise StructureError("parameter vector shape mismatch")
        self.params[:] = params
        if stats is not None:
            if stats.shape != self.stats.shape:
                raise StructureError("statistics vector shape mismatch")
            self.stats[:] = stats

    def copy(self) -> "Network":
        other = self.__class__.__new__(self.__class__)
        other.__dict__.update(self.__dict__)
        other.params = self.params.copy()
        other.stats = self.stats.copy()
        other._bind()
        return other

    def architecture(self) -> dict:
        return {"kind": self.kind}


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# critic
# --------------------------------------------------------------------------

class Critic(Network):
    """q(s, u): state -> 40 Relu, concat(hidden, u) -> 40 Relu, -> 1 linear."""

    kind = "critic"

    def __init__(self, hidden: int = HIDDEN):
        self.hidden = hidden
        super().__init__([
            ("W1", (STATE_DIM, hidden)), ("b1", (hidden,)),
            ("W2", (hidden + ACTION_DIM, hidden)), ("b2", (hidden,)),
            ("W3", (hidden, 1)), ("b3", (1,)),
        ])
        self._cache = None

    def architecture(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden}

    def init(self, rng: np.random.Generator, final_bound: float = 3e-3) -> "Critic":
        p = self.p
        p["W1"][:] = _uniform(rng, p["W1"].shape, 1 / np.sqrt(STATE_DIM))
        p["W2"][:] = _uniform(rng, p["W2"].shape, 1 / np.sqrt(self.hidden + ACTION_DIM))
        p["W3"][:] = _uniform(rng, p["W3"].shape, final_bound)
        for b in ("b1", "b2", "b3"):
            p[b][:] = 0.0
        return self

    def forward(self, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Q-values, shape (B,), for states (B, 3) and actions (B,) or (B, 1)."""
        p = self.p
        s = np.asarray(s, dtype=float).reshape(-1, STATE_DIM)
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        if s.shape[0] != u.shape[0]:
            raise StructureError("state and action batch sizes differ")
        a1 = s @ p["W1"] + p["b1"]
        h1 = np.maximum(a1, 0.0)
        x2 = np.concatenate([h1, u], axis=1)
        a2 = x2 @ p["W2"] + p["b2"]
        h2 = np.maximum(a2, 0.0)
        q = h2 @ p["W3"] + p["b3"]
        self._cache = (s, a1, x2, a2, h2)
        return q[:, 0]

    __call__ = forward

    def backward(self, dq: np.ndarray, want_params: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
        """Backpropagate d(objective)/dq from the last forward pass.

        Returns (flat parameter gradient or None, gradient w.r.t. the action).
        """
        s, a1, x2, a2, h2 = self._cache
        p = self.p
        dq = np.asarray(dq, dtype=float).reshape(-1, 1)
        da2 = (dq @ p["W3"].T) * (a2 > 0)
        dx2 = da2 @ p["W2"].T
        du = dx2[:, self.hidden:].copy()
        if not want_params:
            return None, du[:, 0]
        grad = np.empty_like(self.params)
        g = self.grad_views(grad)
        g["W3"][:] = h2.T @ dq
        g["b3"][:] = dq.sum(axis=0)
        g["W2"][:] = x2.T @ da2
        g["b2"][:] = da2.sum(axis=0)
        da1 = dx2[:, :self.hidden] * (a1 > 0)
        g["W1"][:] = s.T @ da1
        g["b1"][:] = da1.sum(axis=0)
        return grad, du[:, 0]


def critic_forward(critic: Critic, s, u) -> np.ndarray:
    return critic.forward(s, u)


def critic_backward(critic: Critic, s, u, td_errors) -> np.ndarray:
    """Gradient of (1/B) sum_j delta_j q(s_j, u_j) w.r.t. the critic parameters."""
    td = np.asarray(td_errors, dtype=float).ravel()
    critic.forward(s, u)
    grad, _ = critic.backward(td / td.size)
    return grad


def critic_grad_action(critic: Critic, s, u) -> np.ndarray:
    """dq/du for each row."""
    critic.forward(s, u)
    _, du = critic.backward(np.ones(np.asarray(u).size), want_params=False)
    return du


# --------------------------------------------------------------------------
# actor
# --------------------------------------------------------------------------

def _actor_plan(batch_norm: bool, placement: str, hidden: int):
    """Layer sequence as (op, name, width) tuples."""
    dims = [STATE_DIM, hidden, hidden, ACTION_DIM]
    plan = []
    for i in range(3):
        lin = f"L{i + 1}"
        if batch_norm and placement == "input":
            plan.append(("bn", f"N{i}", dims[i]))
        plan.append(("linear", lin, (dims[i], dims[i + 1])))
        if batch_norm and placement == "preact" and i < 2:
            plan.append(("bn", f"N{i + 1}", dims[i + 1]))
        plan.append(("relu" if i < 2 else "tanh", None, None))
    return plan


class Actor(Network):
    """mu(s): 3 -> 40 -> 40 -> 1 with Relu hidden units and a tanh output.

    With ``placement="input"`` every affine map is preceded by batch
    normalization of its input; ``"preact"`` normalizes the two hidden
    pre-activations instead.
    """

    kind = "actor"

    def __init__(self, hidden: int = HIDDEN, batch_norm: bool = True, placement: str = "input"):
        if placement not in ("input", "preact"):
            raise ValueError(f"unknown batch-norm placement {placement!r}")
        self.hidden = hidden
        self.batch_norm = batch_norm
        self.placement = placement
        self.plan = _actor_plan(batch_norm, placement, hidden)
        pentries, sentries = [], []
        for op, name, dim in self.plan:
            if op == "linear":
                pentries += [(name + ".W", dim), (name + ".b", (dim[1],))]
            elif op == "bn":
                pentries += [(name + ".gamma", (dim,)), (name + ".beta", (dim,))]
                sentries += [(name + ".mean", (dim,)), (name + ".var", (dim,))]
        super().__init__(pentries, sentries)
        self._cache = None

    def architecture(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden,
                "batch_norm": self.batch_norm, "placement": self.placement}

    def init(self, rng: np.random.Generator, final_bound: float = 3e-3) -> "Actor":
        p, s = self.p, self.s
        for op, name, dim in self.plan:
            if op == "linear":
                bound = final_bound if name == "L3" else 1 / np.sqrt(dim[0])
                p[name + ".W"][:] = _uniform(rng, dim, bound)
                p[name + ".b"][:] = 0.0
            elif op == "bn":
                p[name + ".gamma"][:] = 1.0
                p[name + ".beta"][:] = 0.0
                s[name + ".mean"][:] = 0.0
                s[name + ".var"][:] = 1.0
        return self

    def reset_stats(self) -> None:
        for op, name, _ in self.plan:
            if op == "bn":
                self.s[name + ".mean"][:] = 0.0
                self.s[name + ".var"][:] = 1.0

    def forward(self, s: np.ndarray, train: bool = False, update_stats: bool = True) -> np.ndarray:
        """Actions in (-1, 1), shape (B,).

        Train mode normalizes with batch statistics (and, unless
        ``update_stats`` is False, moves the running statistics); eval mode
        uses the running statistics only.
        """
        x = np.asarray(s, dtype=float).reshape(-1, STATE_DIM)
        n = x.shape[0]
        if train and self.batch_norm and n < 2:
            raise ModeError("train-mode batch normalization needs a batch of at least 2")
        p, st = self.p, self.s
        cache = []
        for op, name, _ in self.plan:
            if op == "linear":
                cache.append(x)
                x = x @ p[name + ".W"] + p[name + ".b"]
            elif op == "bn":
                if train:
                    mean = x.mean(axis=0)
                    var = x.var(axis=0)
                    if update_stats:
                        m = BN_MOMENTUM
                        unbiased = var * (n / (n - 1))
                        st[name + ".mean"][:] = m * st[name + ".mean"] + (1 - m) * mean
                        st[name + ".var"][:] = m * st[name + ".var"] + (1 - m) * unbiased
                else:
                    mean = st[name + ".mean"]
                    var = st[name + ".var"]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (x - mean) * inv_std
                cache.append((xhat, inv_std))
                x = xhat * p[name + ".gamma"] + p[name + ".beta"]
            elif op == "relu":
                cache.append(x)
                x = np.maximum(x, 0.0)
            else:
                x = np.tanh(x)
                cache.append(x)
        self._cache = (train, cache)
        return x[:, 0]

    __call__ = forward

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Flat parameter gradient of sum_j dout_j * mu_j from the last forward pass.

        In train mode the batch statistics are treated as functions of the
        batch, so rows are coupled through them.
        """
        train, cache = self._cache
        p = self.p
        grad = np.empty_like(self.params)
        g = self.grad_views(grad)
        dx = np.asarray(dout, dtype=float).reshape(-1, 1)
        n = dx.shape[0]
        for (op, name, _), c in zip(reversed(self.plan), reversed(cache)):
            if op == "tanh":
                dx = dx * (1.0 - c * c)
            elif op == "relu":
                dx = dx * (c > 0)
            elif op == "linear":
                g[name + ".W"][:] = c.T @ dx
                g[name + ".b"][:] = dx.sum(axis=0)
                dx = dx @ p[name + ".W"].T
            else:
                xhat, inv_std = c
                g[name + ".gamma"][:] = (dx * xhat).sum(axis=0)
                g[name + ".beta"][:] = dx.sum(axis=0)
                dxhat = dx * p[name + ".gamma"]
                if train:
                    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                                        - xhat * (dxhat * xhat).sum(axis=0))
                else:
                    dx = dxhat * inv_std
        return grad


def actor_forward(actor: Actor, s, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    return actor.forward(s, train=(mode == "train"))


def actor_backward_dpg(actor: Actor, s, dq_du, update_stats: bool = True) -> np.ndarray:
    """Gradient of (1/B) sum_j dq_du_j * mu(s_j) w.r.t. the actor parameters (train mode)."""
    dq_du = np.asarray(dq_du, dtype=float).ravel()
    actor.forward(s, train=True, update_stats=update_stats)
    return actor.backward(dq_du / dq_du.size)


def parameter_count(net: Network) -> int:
    return net.params.size


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float
    mode: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("adam", "plain"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")

    def ensure(self, size: int) -> None:
        if self.m is None:
            self.m = np.zeros(size)
            self.v = np.zeros(size)


def optimizer_step(params: np.ndarray, grads: np.ndarray, opt: OptimizerState,
                   direction: str = "descend") -> np.ndarray:
    """Update ``params`` in place and return it.

    ``direction="ascend"`` moves along +grads (the literal critic rule
    omega <- omega + alpha * g); ``"descend"`` moves along -grads.
    """
    if params.shape != grads.shape:
        raise StructureError(f"shape mismatch {params.shape} vs {grads.shape}")
    if direction not in ("descend", "ascend"):
        raise ValueError(f"unknown direction {direction!r}")
    g = grads if direction == "descend" else -grads
    opt.step += 1
    if opt.mode == "plain":
        params -= opt.lr * g
        return params
    opt.ensure(params.size)
    opt.m *= opt.beta1
    opt.m += (1 - opt.beta1) * g
    opt.v *= opt.beta2
    opt.v += (1 - opt.beta2) * g * g
    mhat = opt.m / (1 - opt.beta1 ** opt.step)
    vhat = opt.v / (1 - opt.beta2 ** opt.step)
    params -= opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
    return params


def soft_update(target: Network, online: Network, tau: float) -> Network:
    """target <- tau * online + (1 - tau) * target, weights and running statistics."""
    if target.params.shape != online.params.shape or target.stats.shape != online.stats.shape:
        raise StructureError("target and online networks differ in shape")
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    if tau == 1.0:
        target.params[:] = online.params
        target.stats[:] = online.stats
    elif tau > 0.0:
        target.params *= 1.0 - tau
        target.params += tau * online.params
        target.stats *= 1.0 - tau
        target.stats += tau * online.stats
    return target


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _build(arch: dict) -> Network:
    kind = arch.get("kind")
    if kind == "critic":
        return Critic(hidden=arch["hidden"])
    if kind == "actor":
        return Actor(hidden=arch["hidden"], batch_norm=arch["batch_norm"],
                     placement=arch["placement"])
    raise StructureError(f"unknown architecture {arch!r}")


def save_networks(path, nets: dict[str, Network], optimizers: dict[str, OptimizerState] | None = None,
                  meta: dict | None = None) -> None:
    """Write networks (and optional optimizer state) to a versioned .npz blob."""
    header = {"version": CHECKPOINT_VERSION, "nets": {}, "optimizers": {}, "meta": meta or {}}
    arrays = {}
    for key, net in nets.items():
        header["nets"][key] = net.architecture()
        arrays[f"{key}/params"] = net.params
        arrays[f"{key}/stats"] = net.stats
    for key, opt in (optimizers or {}).items():
        header["optimizers"][key] = {"lr": opt.lr, "mode": opt.mode, "beta1": opt.beta1,
                                     "beta2": opt.beta2, "eps": opt.eps, "step": opt.step,
                                     "has_moments": opt.m is not None}
        if opt.m is not None:
            arrays[f"opt/{key}/m"] = opt.m
            arrays[f"opt/{key}/v"] = opt.v
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_networks(path, expect: dict[str, dict] | None = None):
    """Inverse of save_networks: returns (nets, optimizers, meta)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise StructureError(f"unsupported checkpoint version {header.get('version')!r}")
        nets = {}
        for key, arch in header["nets"].items():
            if expect is not None and key in expect and expect[key] != arch:
                raise StructureError(f"architecture mismatch for {key}: {arch} != {expect[key]}")
            net = _build(arch)
            net.set_flat(data[f"{key}/params"].copy(), data[f"{key}/stats"].copy())
            nets[key] = net
        opts = {}
        for key, cfg in header["optimizers"].items():
            has = cfg.pop("has_moments")
            opt = OptimizerState(**cfg)
            if has:
                opt.m = data[f"opt/{key}/m"].copy()
                opt.v = data[f"opt/{key}/v"].copy()
            opts[key] = opt
    return nets, opts, header["meta"]
