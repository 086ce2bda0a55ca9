import math

import numpy as np
import pytest

from conftest import at, ramp
from hjbdelay.calculus import (
    FunctionalWithDerivatives,
    adaptive_fd,
    constant_functional,
    generator_terms,
    horizontal_fd,
    ito_residual,
    power_functional,
    time_functional,
    vertical_grad_fd,
    vertical_hess_fd,
)
from hjbdelay.paths import HistoryPath, bump
from hjbdelay.sde import SimConfig, brownian, euler_simulate, zero_coefficients


def p2(v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    x = HistoryPath(np.linspace(-2, 0, 5), np.vstack([np.zeros((4, len(v))), v[None]]))
    return at(0.4, x)


def test_horizontal_examples():
    p = p2([0.3, -1.0])
    assert horizontal_fd(time_functional(), p) == pytest.approx(1.0, rel=1e-10)
    assert horizontal_fd(power_functional(1, [0.0, 0.0]), p) == 0.0


def test_vertical_gradient_examples():
    f = power_functional(1, [0.5])
    assert np.allclose(vertical_grad_fd(f, p2([0.5])), 0.0, atol=1e-12)
    g = power_functional(1, [0.0, 0.0])
    assert np.allclose(vertical_grad_fd(g, p2([0.3, -1.2])), [0.6, -2.4], rtol=1e-8)
    assert np.allclose(vertical_grad_fd(constant_functional(2.0), p2([1.0])), 0.0)


def test_vertical_hessian_examples():
    f = power_functional(1, [0.0, 0.0])
    assert np.allclose(vertical_hess_fd(f, p2([0.3, 0.7])), 2 * np.eye(2), rtol=1e-6)
    g = power_functional(2, [0.0, 0.0])
    expect = 4 * np.eye(2) + 8 * np.outer([1, 0], [1, 0])
    h, asym = vertical_hess_fd(g, p2([1.0, 0.0]), return_asymmetry=True)
    assert np.allclose(h, expect, rtol=1e-6)
    assert asym <= 1e-6
    assert np.all(vertical_hess_fd(constant_functional(1.0, 2), p2([1.0, 2.0])) == 0)


def test_analytic_hessian_symmetric():
    f = power_functional(3, [0.1, -0.2])
    h = f.derivatives(p2([0.7, 1.1]))[2]
    assert np.max(np.abs(h - h.T)) <= 1e-12


def test_bad_steps_rejected():
    with pytest.raises(ValueError):
        vertical_grad_fd(time_functional(), p2([0.0]), h=0.0)
    with pytest.raises(ValueError):
        adaptive_fd(lambda h: h, 0.0)


def test_adaptive_fd_finds_accurate_rung():
    # d/dx exp at 1 with central differences
    est, h = adaptive_fd(lambda h: (np.exp(1 + h) - np.exp(1 - h)) / (2 * h), 0.5)
    assert est == pytest.approx(np.e, rel=1e-10)


def test_missing_derivatives():
    f = FunctionalWithDerivatives(eval=lambda p: 0.0)
    assert not f.has_derivatives
    with pytest.raises(ValueError):
        f.derivatives(p2([0.0]))


def test_generator_terms_trace():
    fx = np.array([1.0, 2.0])
    fxx = 2 * np.eye(2)
    assert generator_terms(0.5, fx, fxx, np.array([1.0, -1.0]), np.eye(2)) == pytest.approx(0.5 - 1.0 + 2.0)


def test_ito_residual_constant_is_zero():
    cfg = SimConfig(dt=0.01, horizon=0.5, paths=20, seed=1)
    traj = euler_simulate(brownian(), HistoryPath.zero(1, 1.0), None, cfg)
    assert np.all(ito_residual(constant_functional(3.0), traj) == 0.0)


def test_ito_residual_square_matches_discrete_identity():
    # |W|^2 - 2 sum W dW - s, written with the recorded increments
    cfg = SimConfig(dt=0.01, horizon=0.5, paths=50, seed=2)
    traj = euler_simulate(brownian(), HistoryPath.zero(1, 1.0), None, cfg)
    dW = traj.dW[..., 0]
    W = np.concatenate([np.zeros((50, 1)), np.cumsum(dW, axis=1)], axis=1)
    oracle = W[:, -1] ** 2 - 2 * np.sum(W[:, :-1] * dW, axis=1) - 0.5
    res = ito_residual(power_functional(1, [0.0]), traj)
    assert np.allclose(res, oracle, atol=1e-12)


def test_ito_generic_path_matches_along():
    cfg = SimConfig(dt=0.05, horizon=0.5, paths=3, seed=3)
    traj = euler_simulate(brownian(), ramp([0.0, 0.5, 1.0]), None, cfg)
    f = power_functional(2, [0.2])
    slow = FunctionalWithDerivatives(f.eval, f.dt, f.dx, f.dxx)
    assert np.allclose(ito_residual(f, traj), ito_residual(slow, traj), atol=1e-12)


def test_ito_residual_zero_dynamics():
    cfg = SimConfig(dt=0.1, horizon=1.0, paths=2, seed=0)
    traj = euler_simulate(zero_coefficients(), ramp([0.0, 1.0]), None, cfg)
    assert np.all(ito_residual(power_functional(1, [0.0]), traj) == 0.0)


def test_bump_fd_uses_cadlag_paths():
    seen = []
    f = FunctionalWithDerivatives(eval=lambda p: seen.append(p.path.regularity) or 0.0)
    vertical_grad_fd(f, p2([1.0]))
    assert set(seen) == {"cadlag"}
    assert bump(p2([1.0]).path, [0.1]).regularity == "cadlag"


def test_adaptive_fd_second_round_cancels_h4():
    # central second difference of exp at 0: error series in h^2, h^4, ...
    def est(h):
        return (math.exp(h) - 2.0 + math.exp(-h)) / (h * h)

    one, _ = adaptive_fd(est, 0.5, rounds=1)
    two, _ = adaptive_fd(est, 0.5, rounds=2)
    assert abs(two - 1.0) <= abs(one - 1.0) + 1e-15
    assert abs(two - 1.0) < 1e-9
    with pytest.raises(ValueError):
        adaptive_fd(est, 0.5, rounds=0)
