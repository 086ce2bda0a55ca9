import math

import numpy as np
import pytest

from conftest import ramp
from hjbdelay.control import canonical_path
from hjbdelay.paths import HistoryPath, history_at, shift
from hjbdelay.rng import brownian_increments
from hjbdelay.sde import (
    Coefficients,
    SimConfig,
    SimulationError,
    brownian,
    coupling_constant,
    euler_simulate,
    geometric_brownian,
    lambda_uniqueness,
    lipschitz_probe,
    memory_weights,
    moment_estimates,
    ornstein_uhlenbeck,
    path_memory,
    sample_states,
    theta,
    zero_coefficients,
)


def test_thresholds():
    assert theta(1.0) == 3.5 and lambda_uniqueness(1.0) == 27.0
    assert theta(0.2) == pytest.approx(0.3) and lambda_uniqueness(0.2) == pytest.approx(3.0)


def test_zero_dynamics_freeze_history():
    xi = ramp([0.0, 1.0, -0.5, 0.25])
    cfg = SimConfig(dt=0.1, horizon=1.0, paths=2, seed=0)
    traj = euler_simulate(zero_coefficients(), xi, None, cfg, t0=0.5)
    assert np.all(traj.states == 0.25)
    assert (history_at(traj, 0.5) - xi).sup_norm() == 0.0
    for s in (0.8, 1.5):
        assert (history_at(traj, s) - shift(xi, s - 0.5)).sup_norm() <= 1e-15


def test_history_endpoint_is_state():
    cfg = SimConfig(dt=0.01, horizon=0.3, paths=2, seed=1)
    traj = euler_simulate(ornstein_uhlenbeck(), ramp([0.0, 1.0]), None, cfg)
    for k in (0, 7, 30):
        assert history_at(traj, k * 0.01, 1).endpoint[0] == traj.states[1, k, 0]


def test_determinism_and_chunk_invariance():
    xi = ramp([0.0, 1.0])
    base = SimConfig(dt=0.01, horizon=0.5, paths=37, seed=11)
    a = euler_simulate(ornstein_uhlenbeck(), xi, None, base)
    b = euler_simulate(ornstein_uhlenbeck(), xi, None, base)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.replay(), a.states)
    s1 = sample_states(ornstein_uhlenbeck(), xi, None, base.with_(chunk=5, workers=1), [0.2, 0.5])
    s8 = sample_states(ornstein_uhlenbeck(), xi, None, base.with_(chunk=5, workers=8), [0.2, 0.5])
    s0 = sample_states(ornstein_uhlenbeck(), xi, None, base.with_(chunk=64), [0.2, 0.5])
    for k in s1:
        assert np.array_equal(s1[k], s8[k]) and np.array_equal(s1[k], s0[k])
    assert np.array_equal(s1["x0"][:, 1], a.states[:, 50, 0])


def test_ou_closed_form_moments():
    cfg = SimConfig(dt=1e-3, horizon=2.0, paths=100_000, seed=5, chunk=8192)
    out = sample_states(ornstein_uhlenbeck(), HistoryPath.zero(1, 1.0), None, cfg, [0.5, 1.0, 2.0])
    x = out["x0"]
    n = x.shape[0]
    for j, s in enumerate((0.5, 1.0, 2.0)):
        m, se = x[:, j].mean(), x[:, j].std(ddof=1) / math.sqrt(n)
        assert abs(m) <= 3 * se
        y = x[:, j] ** 2
        var_se = y.std(ddof=1) / math.sqrt(n)
        assert abs(x[:, j].var(ddof=1) - (1 - math.exp(-2 * s)) / 2) <= 3 * var_se


def test_memory_weights_against_quadrature():
    x = ramp([0.0, 1.0, -2.0, 0.5], left=3.0)
    fine = np.linspace(-3.0, 0.0, 300001)
    vals = np.array([x.value_at(t)[0] for t in fine[::1000]])
    dense = np.interp(fine, fine[::1000], vals)
    for rate in (0.5, 1.0, 3.0):
        ref = np.trapezoid(np.exp(rate * fine) * dense, fine)
        assert path_memory(x, rate)[0] == pytest.approx(ref, rel=1e-6, abs=1e-9)
    w0, w1 = memory_weights(1.0, 1e-9)
    assert w0 + w1 == pytest.approx(1e-9, rel=1e-6)


def _strong_error(coeffs, exact, dt, paths=4000, T=1.0, seed=3):
    cfg = SimConfig(dt=dt, horizon=T, paths=paths, seed=seed)
    fine = 1.0 / 4096
    k = int(round(dt / fine))
    # Euler at dt driven by sums of the fine increments, exact solution on the same path
    dWf = brownian_increments(seed, np.arange(paths), int(round(T / fine)), 1, fine)
    dW = dWf.reshape(-1, k, paths, 1).sum(axis=1)
    xi = ramp([0.0, 1.0], left=1.0)
    traj = euler_simulate(coeffs, xi, None, cfg, dW=dW)
    ref = exact(dWf)
    return math.sqrt(np.mean((traj.states[:, -1, 0] - ref) ** 2))


def test_strong_order_gbm_halves():
    mu, s = 0.5, 0.5

    def exact(dWf):
        W = dWf[:, :, 0].sum(axis=0)
        return np.exp((mu - s * s / 2) * 1.0 + s * W)

    e1 = _strong_error(geometric_brownian(mu, s), exact, 1.0 / 64)
    e4 = _strong_error(geometric_brownian(mu, s), exact, 1.0 / 256)
    assert 1.6 <= e1 / e4 <= 2.4


def test_strong_order_ou_additive_noise_is_first_order():
    def exact(dWf):
        # exact transition on the fine grid: X_{k+1} = e^{-h} X_k + e^{-h/2} dW (midpoint weight)
        h = 1.0 / 4096
        x = np.ones(dWf.shape[1])
        for k in range(dWf.shape[0]):
            x = math.exp(-h) * x + math.exp(-h / 2) * dWf[k, :, 0]
        return x

    e1 = _strong_error(ornstein_uhlenbeck(), exact, 1.0 / 64)
    e4 = _strong_error(ornstein_uhlenbeck(), exact, 1.0 / 256)
    assert e1 / e4 >= 3.0


def test_lipschitz_probe_examples():
    # the capped quadratic cost has Lipschitz constant 2 sqrt(10)
    assert lipschitz_probe(ornstein_uhlenbeck(L=1.0), 500, 0).violation
    assert not lipschitz_probe(ornstein_uhlenbeck(L=2 * math.sqrt(10.0)), 500, 0).violation
    z = lipschitz_probe(zero_coefficients(L=0.5), 100, 0)
    assert z.observed == 0.0 and not z.violation
    quad = Coefficients(
        lambda st, u: st.endpoint**2 + 0 * np.asarray(u)[..., None],
        lambda st, u: np.zeros(st.batch_shape + (1, 1)),
        lambda st, u: np.zeros(st.batch_shape),
        1.0, 1, 1,
    )
    rep = lipschitz_probe(quad, 200, 0)
    assert rep.violation and rep.worst[2] > 1.0


def test_moment_estimates_zero_dynamics_and_threshold():
    cfg = SimConfig(dt=0.05, horizon=1.0, paths=10, seed=0)
    rep = moment_estimates(zero_coefficients(), ramp([0.0, 1.0]), 0.0, -4.0, cfg)
    assert rep.c0_hat == 0.0 and np.all(rep.dev_sq == 0)
    with pytest.raises(ValueError):
        moment_estimates(ornstein_uhlenbeck(), ramp([0.0, 1.0]), 0.0, -3.0, cfg)


def test_coupling_constant_additive_noise_exact():
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=50, seed=0)
    c = coupling_constant(brownian(), canonical_path(1.0), canonical_path(2.0), None, cfg)
    assert c == pytest.approx(1.0, rel=1e-12)


def test_non_finite_state_raises():
    blow = Coefficients(
        lambda st, u: np.full(st.endpoint.shape, np.inf),
        lambda st, u: np.zeros(st.batch_shape + (1, 1)),
        lambda st, u: np.zeros(st.batch_shape),
        1.0, 1, 1,
    )
    with pytest.raises(SimulationError):
        euler_simulate(blow, ramp([0.0, 1.0]), None, SimConfig(dt=0.1, horizon=1.0, paths=2))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt=2.0, horizon=1.0)
