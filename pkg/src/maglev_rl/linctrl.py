"""Model-based baselines: discrete PID on the gap error and LQI synthesis.

The Riccati solver is Newton-Kleinman on top of a Kronecker-vectorised
Lyapunov solve. It is meant for the small (n <= 8) systems used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import LinearModel


class SolverError(np.linalg.LinAlgError):
    """A Lyapunov/Riccati solve failed or did not converge."""


class SynthesisError(SolverError):
    """No stabilizing initial gain could be constructed."""


@dataclass(frozen=True)
class PidGains:
    kp: float = 3100.0
    ki: float = 300.0
    tau: float = 0.1

    @property
    def kd(self) -> float:
        return self.tau * self.kp


@dataclass
class PidState:
    integral_accum: float = 0.0
    prev_error: float | None = None
    integral_limit: float = 10.0

    def reset(self) -> None:
        self.integral_accum = 0.0
        self.prev_error = None


def pid_control(gains: PidGains, state: PidState, error_m: float,
                dt_s: float, error_rate: float | None = None) -> tuple[float, PidState]:
    """Discrete PID: backward-difference derivative, rectangle-rule integral.

    On the first call there is no previous error and the derivative term is
    zero. Passing ``error_rate`` (a measured d(error)/dt) replaces the
    difference quotient. The state is updated in place and also returned.
    """
    if not dt_s > 0:
        raise ValueError("dt_s must be > 0")
    lim = state.integral_limit
    state.integral_accum = min(max(state.integral_accum + error_m * dt_s, -lim), lim)
    prev = error_m if state.prev_error is None else state.prev_error
    derivative = (error_m - prev) / dt_s if error_rate is None else error_rate
    state.prev_error = error_m
    u = gains.kp * error_m + gains.kd * derivative + gains.ki * state.integral_accum
    return u, state


def is_hurwitz(a: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(a).real < 0))


def solve_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve a.T @ p + p @ a + q = 0 for Hurwitz a."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise ValueError("a and q must be square with matching size")
    if not is_hurwitz(a):
        raise SolverError("a is not Hurwitz")
    eye = np.eye(n)
    # row-major vec: vec(A X B) = kron(A, B.T) vec(X)
    lhs = np.kron(a.T, eye) + np.kron(eye, a.T)
    try:
        p = np.linalg.solve(lhs, -q.reshape(-1)).reshape(n, n)
    except np.linalg.LinAlgError as exc:
        raise SolverError(str(exc)) from exc
    return 0.5 * (p + p.T)


def care_residual(a, b, q, r, p) -> np.ndarray:
    a, b, q, p = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (a, b, q, p))
    return a.T @ p + p @ a - p @ b @ b.T @ p / r + q


def initial_stabilizing_gain(a: np.ndarray, b: np.ndarray, r: float) -> np.ndarray:
    """Stabilizing state-feedback gain from a shifted Lyapunov solve.

    For the smallest beta in {2, 4, 8, ...} with -(a + beta I) Hurwitz, solve
    (a + beta I) z + z (a + beta I).T = 2 b b.T / r; then k = b.T z^-1 / r
    places every closed-loop eigenvalue left of -beta.
    """
    n = a.shape[0]
    if is_hurwitz(a):
        return np.zeros((b.shape[1], n))
    beta = 2.0
    while not is_hurwitz(-(a + beta * np.eye(n))):
        beta *= 2.0
        if beta > 1e12:
            raise SynthesisError("no admissible shift found")
    shifted = a + beta * np.eye(n)
    z = solve_lyapunov(-shifted.T, 2.0 * b @ b.T / r)
    try:
        k = np.linalg.solve(z, b).T / r
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("(a, b) is not controllable") from exc
    if not is_hurwitz(a - b @ k):
        raise SynthesisError("shifted-Lyapunov gain is not stabilizing")
    return k


def solve_care(a, b, q, r: float, tol: float = 1e-9, max_iter: int = 100) -> np.ndarray:
    """Stabilizing solution of a.T p + p a - p b b.T p / r + q = 0 (Newton-Kleinman).

    Stops once the residual norm is at most ``tol * max(1, |p|)`` or the
    iterates stop changing at machine precision.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if not r > 0:
        raise ValueError("r must be > 0")
    k = initial_stabilizing_gain(a, b, r)
    p = np.zeros_like(a)
    for _ in range(max_iter):
        closed = a - b @ k
        p_new = solve_lyapunov(closed, q + k.T @ k * r)
        k = b.T @ p_new / r
        scale = max(1.0, np.linalg.norm(p_new))
        if np.linalg.norm(care_residual(a, b, q, r, p_new)) <= tol * scale:
            return p_new
        if np.linalg.norm(p_new - p) <= 1e-14 * scale:
            return p_new
        p = p_new
    raise SolverError(f"Newton-Kleinman did not reach residual {tol} in {max_iter} iterations")


def augment(model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
    """Append the integrator eps_dot = y_r - y = -C z."""
    n = model.a_matrix.shape[0]
    a_aug = np.zeros((n + 1, n + 1))
    a_aug[:n, :n] = model.a_matrix
    a_aug[n, :n] = -model.c_vector.ravel()
    b_aug = np.vstack([model.b_vector.reshape(n, 1), [[0.0]]])
    return a_aug, b_aug


# Equivalent to diag(1e9, 1e6, 1e-2, 1e4) with R = 1, divided through by 1e9.
# The gain is identical; the smaller P keeps the float64 residual tiny.
DEFAULT_LQI_Q = (1.0, 1e-3, 1e-11, 1e-5)
DEFAULT_LQI_R = 1e-9


@dataclass
class LqiGain:
    k_z: np.ndarray
    k_eps: float
    riccati_p: np.ndarray
    residual_norm: float = 0.0
    closed_loop_eigs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def k(self) -> np.ndarray:
        return np.append(self.k_z, self.k_eps)


def lqi_gain(model: LinearModel, q=None, r: float = DEFAULT_LQI_R) -> LqiGain:
    """Synthesize u = k_z z + k_eps eps with the sign of negative feedback folded in."""
    if q is None:
        q = np.diag(DEFAULT_LQI_Q)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.ndim == 2 and q.shape[0] == 1:
        q = np.diag(q.ravel())
    a_aug, b_aug = augment(model)
    p = solve_care(a_aug, b_aug, q, r)
    k = -(b_aug.T @ p / r).ravel()
    eigs = np.linalg.eigvals(a_aug + b_aug @ k[None, :])
    return LqiGain(k_z=k[:-1].copy(), k_eps=float(k[-1]), riccati_p=p,
                   residual_norm=float(np.linalg.norm(care_residual(a_aug, b_aug, q, r, p))),
                   closed_loop_eigs=eigs)


def lqi_control(gain: LqiGain, z, eps_integral: float) -> float:
    return float(np.dot(gain.k_z, z) + gain.k_eps * eps_integral)


@dataclass
class LqiState:
    """Integrator of the output error y_r - y, clamped against windup."""

    eps: float = 0.0
    limit: float = 1.0

    def update(self, z1: float, dt: float) -> float:
        self.eps = min(max(self.eps - z1 * dt, -self.limit), self.limit)
        return self.eps

    def reset(self) -> None:
        self.eps = 0.0


def gain_report(model: LinearModel, gain: LqiGain) -> str:
    lines = ["# LQI synthesis report", "A ="]
    lines += ["  " + " ".join(f"{v: .6e}" for v in row) for row in model.a_matrix]
    lines.append("B = " + " ".join(f"{v: .6e}" for v in model.b_vector.ravel()))
    lines.append("C = " + " ".join(f"{v: .6e}" for v in model.c_vector.ravel()))
    lines.append("k_z = " + " ".join(f"{v: .9e}" for v in gain.k_z))
    lines.append(f"k_eps = {gain.k_eps:.9e}")
    lines.append("P =")
    lines += ["  " + " ".join(f"{v: .9e}" for v in row) for row in gain.riccati_p]
    lines.append("closed-loop eigenvalues = " + ", ".join(
        f"{e.real:.6g}{e.imag:+.6g}j" for e in gain.closed_loop_eigs))
    lines.append(f"CARE residual (Frobenius) = {gain.residual_norm:.3e}")
    return "\n".join(lines) + "\n"
