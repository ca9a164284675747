import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maglev_rl.env import (BatchEnv, CostWeights, EpisodeConfig, LifecycleError, MaglevEnv,
                           cost, read_trace, reset_state, scale_action, trace_row,
                           unscale_voltage, write_trace)
from maglev_rl.plant import PlantParams

P = PlantParams()


def test_cost_terms():
    w = CostWeights()
    assert cost([0.007, 0.0, 0.0], 0.0, w) == pytest.approx(49.0)
    assert cost([0.0, 0.1, 0.0], 0.0, w) == pytest.approx(0.01)
    assert cost([0.0, 0.0, 5.0], P.u_eq, w) == pytest.approx(1e-4 * P.u_eq**2)
    dev = CostWeights(voltage="deviation")
    assert cost([0.0, 0.0, 0.0], P.u_eq, dev, P.u_eq) == 0.0


@settings(max_examples=100)
@given(st.floats(-0.02, 0.02), st.floats(-5, 5), st.floats(-50, 50), st.floats(-300, 300))
def test_cost_nonnegative(z1, z2, z3, u):
    assert cost([z1, z2, z3], u) >= 0.0


def test_invalid_weights_and_config():
    with pytest.raises(ValueError):
        CostWeights(rho1=0.0)
    with pytest.raises(ValueError):
        EpisodeConfig(gamma=1.0)
    with pytest.raises(ValueError):
        EpisodeConfig(reset_mode="other")


@settings(max_examples=100)
@given(st.floats(-3, 3))
def test_scale_action_bounds(a):
    u = scale_action(a, P.u_eq, 200.0)
    assert P.u_eq - 200.0 <= u <= P.u_eq + 200.0
    if -1 <= a <= 1:
        assert unscale_voltage(u, P.u_eq, 200.0) == pytest.approx(a, abs=1e-12)


def test_reset_modes():
    rng = np.random.default_rng(0)
    fixed = EpisodeConfig(reset_mode="fixed")
    assert np.allclose(reset_state(rng, fixed, P), [0.007, 0.0, 0.0])
    rand = EpisodeConfig()
    gaps = np.array([reset_state(rng, rand, P)[0] for _ in range(500)]) + P.target_gap_m
    assert gaps.min() >= 0.003 and gaps.max() <= 0.015


def test_step_lifecycle_and_horizon():
    env = MaglevEnv(cfg=EpisodeConfig(horizon_steps=3), seed=0)
    with pytest.raises(LifecycleError):
        env.step(0.0)
    env.reset()
    dones = [env.step(0.0)[2] for _ in range(3)]
    assert dones == [False, False, True]
    with pytest.raises(LifecycleError):
        env.step(0.0)


def test_step_cost_uses_pre_step_state():
    env = MaglevEnv(seed=0)
    s = env.reset([0.005, 0.1, 0.0])
    _, c, _ = env.step(0.25)
    assert c == cost(s, env.voltage(0.25), env.weights, env.u_eq)


def test_violation_modes():
    stop = MaglevEnv(cfg=EpisodeConfig(reset_mode="fixed"), seed=0)
    stop.reset([0.0119, 2.0, 0.0])
    _, _, done = stop.step(-1.0)
    assert stop.bound_violated and not done
    term = MaglevEnv(cfg=EpisodeConfig(terminate_on_violation=True), seed=0)
    term.reset([0.0119, 2.0, 0.0])
    _, _, done = term.step(-1.0)
    assert term.bound_violated and done


def test_episode_return_bounded():
    cfg = EpisodeConfig(horizon_steps=200)
    env = MaglevEnv(cfg=cfg, seed=3)
    rng = np.random.default_rng(3)
    env.reset()
    total = 0.0
    done = False
    while not done:
        _, c, done = env.step(rng.uniform(-1, 1))
        total += c
    # gap error at most 12 mm; the rate is zero at contact and otherwise finite
    assert math.isfinite(total)
    worst_gap_and_voltage = 1e6 * 0.012**2 + 1e-4 * (P.u_eq + 200) ** 2
    assert total >= 0 and total / 200 < worst_gap_and_voltage + 1e3


def test_seeded_env_reproducible():
    runs = []
    for _ in range(2):
        env = MaglevEnv(seed=11)
        env.reset()
        runs.append([env.step(0.1)[1] for _ in range(50)])
    assert runs[0] == runs[1]


def test_batch_env_matches_scalar_without_noise():
    quiet = PlantParams(disturbance_variance_N2=0.0)
    cfg = EpisodeConfig(reset_mode="fixed")
    batch = BatchEnv(3, quiet, CostWeights(), cfg, seed=0)
    z = batch.reset([0.007, 0.0, 0.0])
    env = MaglevEnv(quiet, CostWeights(), cfg, seed=0)
    s = env.reset([0.007, 0.0, 0.0])
    for k in range(200):
        a = 0.3 * math.sin(k / 10)
        z, c, _ = batch.step(np.full(3, a))
        s, c1, _ = env.step(a)
        assert np.allclose(z[0], s, rtol=1e-12, atol=1e-15)
        assert c[0] == pytest.approx(c1, rel=1e-12)


def test_trace_roundtrip(tmp_path):
    rows = [trace_row(k, 1e-3, [0.001 * k, 0.1, -0.5], 20.0 + k / 3, 1.0 / 7, k == 2, P)
            for k in range(3)]
    path = tmp_path / "t.csv"
    write_trace(path, rows)
    assert read_trace(path) == rows
