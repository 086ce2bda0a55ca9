"""Pathwise (Dupire) derivatives by finite differences, and a functional Ito check.

Horizontal derivative: ``[f(t + h, x_h) - f(t, x)] / h`` with the frozen shift.
Vertical derivatives: central differences under the endpoint bump
``x + h e_i 1_{0}``, nested for the second order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .paths import TimedPath, bump, history_at, shift

__all__ = [
    "FunctionalWithDerivatives",
    "horizontal_fd",
    "vertical_grad_fd",
    "vertical_hess_fd",
    "generator_terms",
    "adaptive_fd",
    "ito_residual",
    "ito_residuals",
    "power_functional",
    "constant_functional",
    "time_functional",
    "default_vertical_step",
    "default_horizontal_step",
]


@dataclass(frozen=True)
class FunctionalWithDerivatives:
    """A functional on time-path pairs with (optional) analytic derivatives.

    ``along``, when given, evaluates ``(f, dt, dx, dxx)`` on every grid point of
    every path of a trajectory at once; arrays have shapes ``(N, K+1)``,
    ``(N, K+1)``, ``(N, K+1, d)`` and ``(N, K+1, d, d)``.
    """

    eval: Callable[[TimedPath], float]
    dt: Optional[Callable[[TimedPath], float]] = None
    dx: Optional[Callable[[TimedPath], np.ndarray]] = None
    dxx: Optional[Callable[[TimedPath], np.ndarray]] = None
    along: Optional[Callable] = None
    name: str = "f"

    def __call__(self, p):
        return self.eval(p)

    @property
    def has_derivatives(self):
        return self.dt is not None and self.dx is not None and self.dxx is not None

    def derivatives(self, p):
        if not self.has_derivatives:
            raise ValueError(f"functional {self.name!r} has no analytic derivatives")
        return float(self.dt(p)), np.asarray(self.dx(p), float), np.asarray(self.dxx(p), float)


def default_vertical_step(p):
    return 1e-4 * max(1.0, p.path.sup_norm())


def default_horizontal_step(p):
    return 1e-4 * max(1.0, p.t)


def _bumped(p, v):
    return TimedPath(p.t, bump(p.path, v))


def horizontal_fd(f, p, h=None, richardson=False):
    """Forward quotient ``[f(t+h, x_h) - f(t, x)] / h``."""
    h = default_horizontal_step(p) if h is None else h
    if h <= 0:
        raise ValueError("step must be positive")
    f0 = f(p)

    def q(step):
        return (f(TimedPath(p.t + step, shift(p.path, step))) - f0) / step

    if richardson:
        return 2.0 * q(h / 2) - q(h)
    return q(h)


def vertical_grad_fd(f, p, h=None, richardson=False):
    """Central differences under endpoint bumps; returns the d-vector."""
    h = default_vertical_step(p) if h is None else h
    if h <= 0:
        raise ValueError("step must be positive")
    d = p.path.d
    eye = np.eye(d)

    def g(step):
        return np.array(
            [(f(_bumped(p, step * eye[i])) - f(_bumped(p, -step * eye[i]))) / (2 * step) for i in range(d)]
        )

    if richardson:
        return (4.0 * g(h / 2) - g(h)) / 3.0
    return g(h)


def vertical_hess_fd(f, p, h=None, richardson=False, return_asymmetry=False):
    """Nested central differences ``d_i(d_j f)``, symmetrized.

    With ``return_asymmetry`` the relative asymmetry ``|A - A^T| / |A|`` of the
    raw nested stencil is returned alongside the matrix.
    """
    h = default_vertical_step(p) if h is None else h
    if h <= 0:
        raise ValueError("step must be positive")
    d = p.path.d
    eye = np.eye(d)

    def nested(step):
        a = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        x = bump(bump(p.path, sj * step * eye[j]), si * step * eye[i])
                        acc += si * sj * f(TimedPath(p.t, x))
                a[i, j] = acc / (4 * step * step)
        return a

    a = nested(h)
    if richardson:
        a = (4.0 * nested(h / 2) - a) / 3.0
    scale = max(np.max(np.abs(a)), 1e-300)
    asym = float(np.max(np.abs(a - a.T)) / scale)
    sym = 0.5 * (a + a.T)
    if return_asymmetry:
        return sym, asym
    return sym


def adaptive_fd(estimate, h_max, factor=2.0, levels=10, richardson=True, rounds=1):
    """Run ``estimate(h)`` on a geometric step ladder below ``h_max``.

    With ``richardson`` neighbouring rungs are combined to cancel the leading
    error terms of a central stencil: ``rounds`` eliminations remove
    ``h^2, ..., h^{2 rounds}``.  Each interior rung is scored by its larger
    disagreement with its two neighbours; the best-scored estimate is
    returned with its step.  This balances truncation (large steps) against
    rounding (small steps) without knowing either scale in advance.
    """
    if not h_max > 0:
        raise ValueError("step must be positive")
    if levels < 3:
        raise ValueError("need at least three rungs")
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    extra = rounds if richardson else 0
    hs = [h_max / factor**k for k in range(levels + extra)]
    vals = [np.asarray(estimate(h), dtype=float) for h in hs]
    for j in range(1, extra + 1):
        c = factor ** (2 * j)
        vals = [(c * vals[k + 1] - vals[k]) / (c - 1.0) for k in range(len(vals) - 1)]
    gaps = [float(np.max(np.abs(vals[k + 1] - vals[k]))) for k in range(levels - 1)]
    score = [max(gaps[k - 1], gaps[k]) for k in range(1, levels - 1)]
    k = 1 + int(np.argmin(score))
    return vals[k], hs[k]


def generator_terms(ft, fx, fxx, b, sig):
    """``dt f + (dx f, b) + 1/2 tr(dxx f sig sig^T)`` with broadcasting."""
    drift = np.einsum("...i,...i->...", fx, b)
    diff = np.einsum("...ij,...jk,...ik->...", fxx, sig, sig)
    return ft + drift + 0.5 * diff


def _along_generic(f, traj):
    n_paths, kp1, d = traj.states.shape
    vals = np.empty((n_paths, kp1))
    ft = np.empty((n_paths, kp1))
    fx = np.empty((n_paths, kp1, d))
    fxx = np.empty((n_paths, kp1, d, d))
    for i in range(n_paths):
        for k in range(kp1):
            s = traj.t0 + k * traj.dt
            p = TimedPath(s, history_at(traj, s, i))
            vals[i, k] = f(p)
            ft[i, k], fx[i, k], fxx[i, k] = f.derivatives(p)
    return vals, ft, fx, fxx


def ito_residual(f, traj, drift=None, vol=None, dW=None, steps=None):
    """Per-path residual of the functional Ito formula on an Euler trajectory.

    ``f(s, X_s) - f(t, X_t) - sum[generator] dt - sum dx f . vol dW`` with all
    integrals as left-point sums over the first ``steps`` grid intervals.
    """
    drift = traj.drift if drift is None else drift
    vol = traj.vol if vol is None else vol
    dW = traj.dW if dW is None else dW
    n_steps = drift.shape[1]
    if vol.shape[1] != n_steps or dW.shape[1] != n_steps or traj.states.shape[1] != n_steps + 1:
        raise ValueError("records are not aligned with the trajectory grid")
    if not f.has_derivatives:
        raise ValueError("ito_residual needs all three analytic derivatives")
    steps = n_steps if steps is None else steps
    if f.along is not None:
        vals, ft, fx, fxx = f.along(traj)
    else:
        vals, ft, fx, fxx = _along_generic(f, traj)
    k = slice(0, steps)
    lebesgue = generator_terms(ft[:, k], fx[:, k], fxx[:, k], drift[:, k], vol[:, k]).sum(axis=1) * traj.dt
    noise = np.einsum("nki,nkij,nkj->nk", fx[:, k], vol[:, k], dW[:, k]).sum(axis=1)
    return vals[:, steps] - vals[:, 0] - lebesgue - noise


# -- simple shipped functionals ---------------------------------------------------


def power_functional(m, a0):
    """``f(t, x) = |x(0) - a0|^{2m}`` with its closed-form derivatives."""
    from .gauge import power_term_derivs

    a0 = np.atleast_1d(np.asarray(a0, dtype=float))

    def ev(p):
        v = p.path.endpoint - a0
        return float(np.dot(v, v) ** m)

    def along(traj):
        v = traj.states - a0
        r2 = np.einsum("...i,...i->...", v, v)
        vals = r2**m
        _, g, hm = power_term_derivs(m, a0, traj.states)
        return vals, np.zeros_like(vals), g, hm

    return FunctionalWithDerivatives(
        eval=ev,
        dt=lambda p: 0.0,
        dx=lambda p: power_term_derivs(m, a0, p.path.endpoint)[1],
        dxx=lambda p: power_term_derivs(m, a0, p.path.endpoint)[2],
        along=along,
        name=f"|x(0)-a|^{2 * m}",
    )


def constant_functional(c, d=1):
    def along(traj):
        n, kp1, dd = traj.states.shape
        return np.full((n, kp1), float(c)), np.zeros((n, kp1)), np.zeros((n, kp1, dd)), np.zeros((n, kp1, dd, dd))

    return FunctionalWithDerivatives(
        eval=lambda p: float(c),
        dt=lambda p: 0.0,
        dx=lambda p: np.zeros(p.path.d),
        dxx=lambda p: np.zeros((p.path.d, p.path.d)),
        along=along,
        name="const",
    )


def time_functional():
    return FunctionalWithDerivatives(
        eval=lambda p: float(p.t),
        dt=lambda p: 1.0,
        dx=lambda p: np.zeros(p.path.d),
        dxx=lambda p: np.zeros((p.path.d, p.path.d)),
        name="t",
    )


def ito_residuals(f, coeffs, xi, control, cfg, t0=0.0, chunk=512):
    """Itô residuals on ``cfg.paths`` simulated paths, computed in path blocks.

    Blocks keep the stored trajectories small; block layout depends only on
    ``chunk`` so the result is the same for any worker count.
    """
    from .sde import euler_simulate, map_chunks

    def run(ids):
        traj = euler_simulate(coeffs, xi, control, cfg, t0=t0, path_ids=ids)
        return ito_residual(f, traj)

    return np.concatenate(map_chunks(run, cfg.paths, chunk, cfg.workers))
