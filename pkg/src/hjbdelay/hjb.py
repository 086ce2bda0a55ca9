"""Hamiltonian, generator, residuals of the path-dependent HJB equation.

The equation is ``-lam V + dt V + H(x, dx V, dxx V) = 0`` with

    H(x, p, l) = min_u [ (p, b(x, u)) + 1/2 tr(l sigma sigma^T) + q(x, u) ]

over a finite control set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import FunctionalWithDerivatives, generator_terms
from .control import (
    ControlProblem,
    canonical_path,
    riccati_coefficient,
    value_many,
)
from .paths import TimedPath, random_paths
from .rng import probe_generator

__all__ = [
    "hamiltonian",
    "generator",
    "HJBResidualReport",
    "classical_residual",
    "lq_functional",
    "sum_functionals",
    "ViscosityReport",
    "viscosity_probe",
    "ReductionError",
    "ReducedProblem",
    "reduce_no_delay",
    "embedding_check",
    "StabilityRow",
    "stability_experiment",
]


def _controls(control_set):
    u = np.asarray(list(control_set), dtype=float).reshape(-1)
    if u.size == 0:
        raise ValueError("empty control set")
    return u


def hamiltonian(x, p, l, coeffs, control_set):
    """Exact minimum over a finite control set; ties go to the first control.

    Returns ``(value, argmin_control)``.
    """
    u = _controls(control_set)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l = np.atleast_2d(np.asarray(l, dtype=float))
    if not np.allclose(l, l.T, rtol=0, atol=1e-12 * max(1.0, np.abs(l).max())):
        raise ValueError("l must be symmetric")
    st = coeffs.state_of(x).broadcast_to(u.shape)
    b = coeffs.drift(st, u)
    s = coeffs.vol(st, u)
    q = coeffs.cost(st, u)
    vals = generator_terms(np.zeros(len(u)), np.broadcast_to(p, b.shape), np.broadcast_to(l, (len(u),) + l.shape), b, s) + q
    i = int(np.argmin(vals))
    return float(vals[i]), float(u[i])


def generator(phi, s, x, u, coeffs):
    """``dt phi + (dx phi, b) + 1/2 tr(dxx phi sigma sigma^T)`` at ``(s, x)`` under ``u``."""
    ft, fx, fxx = phi.derivatives(TimedPath(s, x))
    return float(generator_terms(ft, fx, fxx, coeffs.b(x, u), coeffs.sigma(x, u)))


@dataclass
class HJBResidualReport:
    probe: TimedPath
    residual: float
    control: float
    lam_term: float
    dt_term: float
    hamiltonian: float
    grid_spacing: float = 0.0

    def recomputed(self):
        return self.lam_term + self.dt_term + self.hamiltonian

    def row(self):
        return [repr(float(self.probe.path.endpoint[0])), repr(self.residual), repr(self.control),
                repr(self.lam_term), repr(self.dt_term), repr(self.hamiltonian)]


def classical_residual(v, x, t, problem, control_set=None):
    """``-lam v + dt v + H(x, dx v, dxx v)`` at ``(t, x)``.

    ``control_set`` overrides the problem's action set (e.g. a finer grid).
    ``grid_spacing`` in the report is the largest gap of the set used.
    """
    control_set = problem.actions if control_set is None else control_set
    u = np.sort(_controls(control_set))
    p = TimedPath(t, x)
    ft, fx, fxx = v.derivatives(p)
    ham, arg = hamiltonian(x, fx, fxx, problem.coeffs, u)
    lam_term = -problem.lam * v(p)
    res = lam_term + ft + ham
    spacing = float(np.max(np.diff(u))) if len(u) > 1 else math.inf
    return HJBResidualReport(p, res, arg, lam_term, ft, ham, spacing)


def lq_functional(lam, sigma0):
    """The embedded Riccati solution ``v(t, x) = a x(0)^2 + sigma0^2 a / lam``."""
    a = riccati_coefficient(lam)
    c = sigma0 * sigma0 * a / lam

    def ev(p):
        z = p.path.endpoint[0]
        return a * z * z + c

    return FunctionalWithDerivatives(
        eval=ev,
        dt=lambda p: 0.0,
        dx=lambda p: np.array([2 * a * p.path.endpoint[0]]),
        dxx=lambda p: np.array([[2 * a]]),
        name="riccati",
    )


def sum_functionals(f, g, name=None):
    """Pointwise sum, derivatives included."""

    def dsum(p):
        a, b = f.derivatives(p), g.derivatives(p)
        return a[0] + b[0], a[1] + b[1], a[2] + b[2]

    return FunctionalWithDerivatives(
        eval=lambda p: f(p) + g(p),
        dt=lambda p: dsum(p)[0],
        dx=lambda p: dsum(p)[1],
        dxx=lambda p: dsum(p)[2],
        name=name or f"{f.name}+{g.name}",
    )


# -- viscosity probe ---------------------------------------------------------------


@dataclass
class ViscosityReport:
    kind: str
    membership_margin: float
    membership_ok: bool
    touch_gap: float
    inequality: float
    inequality_ok: bool
    note: str = "sampled membership -- not a proof"

    @property
    def passed(self):
        return self.membership_ok and self.inequality_ok


def viscosity_probe(w, phi, p, problem, sample_domain, kind="sub", tol=1e-9, control_set=None):
    """Check a test functional against the sub- or supersolution inequality.

    ``w`` maps a history to a real, ``phi`` is a FunctionalWithDerivatives and
    ``sample_domain`` a list of TimedPath with times ``>= p.t``.

    * ``kind="sub"``: membership ``w - phi = 0`` at ``p`` and ``<= 0`` on the
      samples; inequality ``-lam w + dt phi + H(x, dx phi, dxx phi) >= 0``.
    * ``kind="super"``: membership ``w + phi = 0`` at ``p`` and ``>= 0`` on
      the samples; inequality ``-lam w - dt phi + H(x, -dx phi, -dxx phi) <= 0``.

    The membership part only inspects the sampled points.
    """
    if kind not in ("sub", "super"):
        raise ValueError("kind must be 'sub' or 'super'")
    if any(q.t < p.t for q in sample_domain):
        raise ValueError("sample times must not precede the probe time")
    sign = 1.0 if kind == "sub" else -1.0
    control_set = problem.actions if control_set is None else control_set
    touch = w(p.path) - sign * phi(p)
    if kind == "sub":
        margin = max((w(q.path) - phi(q) for q in sample_domain), default=-math.inf)
        member = abs(touch) <= tol and margin <= tol
    else:
        margin = min((w(q.path) + phi(q) for q in sample_domain), default=math.inf)
        member = abs(touch) <= tol and margin >= -tol
    ft, fx, fxx = phi.derivatives(p)
    ham, _ = hamiltonian(p.path, sign * fx, sign * fxx, problem.coeffs, control_set)
    ineq = -problem.lam * w(p.path) + sign * ft + ham
    ok = ineq >= -tol if kind == "sub" else ineq <= tol
    return ViscosityReport(kind, float(margin), bool(member), float(touch), float(ineq), bool(ok))


# -- no-delay reduction ----------------------------------------------------------


def _vanishing_at_zero(e):
    """``e`` minus the linear ramp to its endpoint, so the result is 0 at 0."""
    ramp = (e.nodes - e.nodes[0]) / -e.nodes[0]
    return e - type(e)._raw(e.nodes.copy(), np.outer(ramp, e.endpoint))


class ReductionError(ValueError):
    """The coefficients depend on the history beyond its endpoint."""


@dataclass
class ReducedProblem:
    """Finite-dimensional coefficients ``(z, u) -> b, sigma, q`` and the embedding."""

    problem: ControlProblem
    max_change: float
    left_horizon: float = 4.0

    def embed(self, z):
        return canonical_path(z, self.left_horizon)

    def b(self, z, u):
        return self.problem.coeffs.b(self.embed(z), u)

    def sigma(self, z, u):
        return self.problem.coeffs.sigma(self.embed(z), u)

    def q(self, z, u):
        return self.problem.coeffs.q(self.embed(z), u)

    def hamiltonian(self, z, p, l):
        return hamiltonian(self.embed(z), p, l, self.problem.coeffs, self.problem.actions)


def reduce_no_delay(problem, probes=20, seed=0, tol=1e-12):
    """Certify point dependence by perturbing histories away from ``theta = 0``.

    Random histories are perturbed by random paths that vanish at ``0``; the
    coefficients must not move by more than ``tol``.
    """
    rng = probe_generator(seed, 21)
    d = problem.coeffs.d
    xs = random_paths(rng, probes, d, 16)
    bumps = random_paths(rng, probes, d, 16)
    worst = 0.0
    for x, e in zip(xs, bumps):
        y = x + _vanishing_at_zero(e)
        for u in problem.actions:
            for fa, fb in ((problem.coeffs.b(x, u), problem.coeffs.b(y, u)),
                           (problem.coeffs.sigma(x, u), problem.coeffs.sigma(y, u)),
                           (problem.coeffs.q(x, u), problem.coeffs.q(y, u))):
                worst = max(worst, float(np.max(np.abs(np.asarray(fa) - np.asarray(fb)))))
    if worst > tol:
        raise ReductionError(f"coefficients change by {worst:.3g} under history perturbations")
    return ReducedProblem(problem, worst)


def embedding_check(problem, z, cfg, other=None):
    """Value estimates at two histories with endpoint ``z`` under common noise.

    Returns ``(difference, combined_se)``; the reduction predicts zero.
    """
    x = canonical_path(z)
    if other is None:
        rough = random_paths(probe_generator(cfg.seed, 23), 1, problem.coeffs.d, 65)[0]
        other = x + _vanishing_at_zero(rough)
    if not np.allclose(other.endpoint, x.endpoint):
        raise ValueError("the two histories must share the endpoint")
    a, b = value_many([x, other], problem, cfg)
    return a.value - b.value, math.hypot(a.std_error, b.std_error)


# -- stability under coefficient perturbations -------------------------------------


@dataclass
class StabilityRow:
    eps: float
    coeff_distance: float
    value_distance: float
    predicted: float = float("nan")
    std_error: float = 0.0
    bias: float = 0.0

    def row(self):
        return [repr(v) for v in (self.eps, self.coeff_distance, self.value_distance, self.predicted, self.std_error, self.bias)]


def _coeff_distance(p0, p1, xs):
    worst = 0.0
    for x in xs:
        for u in p0.actions:
            for f in ("b", "sigma", "q"):
                a = np.asarray(getattr(p0.coeffs, f)(x, u))
                b = np.asarray(getattr(p1.coeffs, f)(x, u))
                worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def stability_experiment(factory, eps_list, cfg, xs=None, which="q"):
    """Distances between perturbed and base coefficients and values.

    ``factory(eps_b=..., eps_q=...)`` builds the problem; ``which`` selects the
    perturbed coefficient.  Values are compared under common noise on the
    sample histories ``xs``.  For ``which="q"`` the predicted shift is the
    discounted quadrature of the constant ``eps``; ``bias`` is its distance
    from ``eps / lam``.
    """
    if which not in ("q", "b"):
        raise ValueError("which must be 'q' or 'b'")
    xs = xs or [canonical_path(z) for z in (-1.0, 0.0, 1.0)]
    base = factory()
    v0 = value_many(xs, base, cfg)
    rows = []
    for eps in eps_list:
        kw = {"eps_q": eps} if which == "q" else {"eps_b": eps}
        pe = factory(**kw)
        ve = value_many(xs, pe, cfg)
        diffs = [abs(a.value - b.value) for a, b in zip(ve, v0)]
        j = int(np.argmax(diffs))
        se = math.hypot(ve[j].std_error, v0[j].std_error)
        pred, bias = float("nan"), 0.0
        if which == "q":
            K = cfg.steps
            quad = float(np.sum(np.exp(-base.lam * cfg.dt * np.arange(K))) * cfg.dt)
            pred = eps / base.lam
            bias = eps * abs(quad - 1.0 / base.lam)
        rows.append(StabilityRow(eps, _coeff_distance(base, pe, xs), float(diffs[j]), pred, se, bias))
    return rows
