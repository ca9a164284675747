import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from maglev_rl.linctrl import (LqiState, PidGains, PidState, SolverError, augment, care_residual,
                               gain_report, initial_stabilizing_gain, is_hurwitz, lqi_control,
                               lqi_gain, pid_control, solve_care, solve_lyapunov)
from maglev_rl.plant import PlantParams, linearize

MODEL = linearize(PlantParams())


def random_stabilizable(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    a = rng.normal(size=(n, n))
    b = rng.normal(size=(n, 1))
    # random draws are controllable with probability one; guard against near misses
    ctrb = np.hstack([np.linalg.matrix_power(a, k) @ b for k in range(n)])
    if np.linalg.cond(ctrb) > 1e6:
        b = np.ones((n, 1))
        a = np.diag(rng.normal(size=n)) + np.diag(np.ones(n - 1), 1)
    return a, b


def test_pid_kd_and_terms():
    g = PidGains()
    assert g.kd == pytest.approx(310.0)
    st_ = PidState()
    u, _ = pid_control(g, st_, 0.001, 1e-3)
    # first call: no derivative kick
    assert u == pytest.approx(3100 * 0.001 + 300 * 1e-6)
    u, _ = pid_control(g, st_, 0.002, 1e-3)
    assert u == pytest.approx(3100 * 0.002 + 310 * 1.0 + 300 * 3e-6)


def test_pid_measured_rate():
    st_ = PidState()
    u, _ = pid_control(PidGains(), st_, 0.001, 1e-3, error_rate=0.5)
    assert u == pytest.approx(3.1 + 310 * 0.5 + 300e-6)


def test_pid_integral_clamped_and_reset():
    st_ = PidState(integral_limit=0.01)
    for _ in range(100):
        pid_control(PidGains(), st_, 1.0, 1e-3)
    assert st_.integral_accum == pytest.approx(0.01)
    st_.reset()
    assert st_.integral_accum == 0.0 and st_.prev_error is None


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_control(PidGains(), PidState(), 0.0, 0.0)


def test_lyapunov_against_scipy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        a = rng.normal(size=(n, n)) - (n + 2) * np.eye(n)
        q = rng.normal(size=(n, n))
        q = q @ q.T
        p = solve_lyapunov(a, q)
        ref = scipy.linalg.solve_continuous_lyapunov(a.T, -q)
        assert np.allclose(p, ref, rtol=1e-9, atol=1e-12)
        assert np.allclose(p, p.T)


def test_lyapunov_requires_hurwitz():
    with pytest.raises(SolverError):
        solve_lyapunov(np.eye(2), np.eye(2))


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 10_000))
def test_care_random_systems(seed):
    a, b = random_stabilizable(seed)
    n = a.shape[0]
    q = np.eye(n)
    p = solve_care(a, b, q, 1.0)
    # float64 floor of the residual grows with |p|^2
    assert np.linalg.norm(care_residual(a, b, q, 1.0, p)) <= 1e-9 * max(1.0, np.linalg.norm(p)) ** 2
    assert is_hurwitz(a - b @ b.T @ p)
    ref = scipy.linalg.solve_continuous_are(a, b, q, np.eye(1))
    assert np.allclose(p, ref, rtol=1e-6, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_initial_gain_stabilizes(seed):
    a, b = random_stabilizable(seed)
    k = initial_stabilizing_gain(a, b, 1.0)
    assert is_hurwitz(a - b @ k)


def test_augment_shapes():
    a_aug, b_aug = augment(MODEL)
    assert a_aug.shape == (4, 4) and b_aug.shape == (4, 1)
    assert np.array_equal(a_aug[3], [-1.0, 0.0, 0.0, 0.0])
    assert b_aug[3, 0] == 0.0


def test_default_lqi_gain():
    g = lqi_gain(MODEL)
    assert g.residual_norm <= 1e-9
    assert np.all(g.closed_loop_eigs.real < 0)
    a_aug, b_aug = augment(MODEL)
    ref = scipy.linalg.solve_continuous_are(a_aug, b_aug, np.diag([1e9, 1e6, 1e-2, 1e4]), np.eye(1))
    k_ref = -(b_aug.T @ ref).ravel()
    assert np.allclose(g.k, k_ref, rtol=1e-6)


def test_lqi_scaling_invariance():
    # multiplying Q and R by one constant leaves the gain unchanged
    q = np.diag([1.0, 1e-3, 1e-11, 1e-5])
    g1 = lqi_gain(MODEL, q, 1e-9)
    g2 = lqi_gain(MODEL, 10 * q, 1e-8)
    assert np.allclose(g1.k, g2.k, rtol=1e-8)


def test_lqi_control_and_integrator():
    g = lqi_gain(MODEL)
    z = np.array([0.001, 0.0, 0.0])
    assert lqi_control(g, z, 0.0) == pytest.approx(g.k_z[0] * 0.001)
    s = LqiState(limit=1e-4)
    for _ in range(1000):
        s.update(0.001, 1e-3)
    assert s.eps == pytest.approx(-1e-4)


def test_gain_report_contents():
    text = gain_report(MODEL, lqi_gain(MODEL))
    assert "CARE residual" in text and "k_eps" in text
