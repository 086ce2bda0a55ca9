"""Smooth gauge-type functionals on the time-path space.

For ``p = (t, x)`` and ``q = (s, y)`` write ``D = x_{(s-t) v 0} - y_{(t-s) v 0}``
(the earlier path shifted forward), ``N = |D|_C`` and ``v = x(0) - y(0)``.
Then

    S_m      = (N^{2m} - |v|^{2m})^3 / N^{4m}      (0 when N = 0)
    Y^{m,M}  = S_m + M |v|^{2m}
    Ybar     = Y^{m,M} + |s - t|^2

Everything funnels through :func:`gauge_terms`, a vectorized kernel taking the
sup of ``|D|`` over ``theta < 0`` and the endpoint difference ``v``.  The
kernel sets ``N = max(sup_minus, |v|)`` so that the outer branch
``|v| >= sup_minus`` (where ``S_m`` and its vertical derivatives vanish)
is hit exactly rather than up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import FunctionalWithDerivatives
from .paths import HistoryPath, TimedPath, aligned_difference, bump, history_at, shift

__all__ = [
    "GaugeSpec",
    "DEFAULT_SPEC",
    "AnchoredGauge",
    "gauge_terms",
    "s_m",
    "upsilon",
    "upsilon_bar",
    "grad_s_m",
    "hess_s_m",
    "power_term_derivs",
    "full_upsilon_derivs",
    "upsilon_batch",
    "InequalityCheck",
    "verify_inequalities",
    "gauge_property_check",
    "counterexample_pair",
    "is_near_kink",
    "DerivativeRow",
    "derivative_check",
]


@dataclass(frozen=True)
class GaugeSpec:
    m: int = 3
    M: float = 3.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")

    @property
    def bounds_apply(self):
        """The two-sided bound and subadditivity are only claimed for M >= 3."""
        return self.M >= 3


DEFAULT_SPEC = GaugeSpec(3, 3.0)


def gauge_terms(sup_minus, v, m, derivs=True):
    """Value, gradient and Hessian of ``S_m`` in the endpoint variable.

    Parameters
    ----------
    sup_minus : array_like, shape (...)
        ``sup_{theta<0} |D(theta)|``.
    v : array_like, shape (..., d)
        ``D(0)``.
    m : int
    derivs : bool
        Skip the derivative arrays when false.

    Returns
    -------
    s : ndarray (...)
    grad : ndarray (..., d) or None
    hess : ndarray (..., d, d) or None
    """
    sup_minus = np.asarray(sup_minus, dtype=float)
    v = np.asarray(v, dtype=float)
    r2 = np.einsum("...i,...i->...", v, v)
    r = np.sqrt(r2)
    inner = r < sup_minus
    norm = np.where(inner, sup_minus, r)
    safe = np.where(norm > 0, norm, 1.0)
    # scale-free form N^{2m} (1 - rho)^3 with rho = (r/N)^{2m}; the expanded
    # (N^{2m} - r^{2m})^3 / N^{4m} under- or overflows for extreme N
    n2m = norm ** (2 * m)
    one_m = np.where(inner, 1.0 - (r / safe) ** (2 * m), 0.0)
    s = n2m * one_m**3
    if not derivs:
        return s, None, None
    d = v.shape[-1]
    r2m2 = r2 ** (m - 1)
    g_coef = -6.0 * m * one_m**2 * r2m2
    grad = g_coef[..., None] * v
    outer = v[..., :, None] * v[..., None, :]
    c_vv = 24.0 * m * m * (one_m / np.where(inner, n2m, 1.0)) * r2m2**2
    if m > 1:
        c_vv = c_vv - 12.0 * m * (m - 1) * one_m**2 * r2 ** (m - 2)
    hess = c_vv[..., None, None] * outer + g_coef[..., None, None] * np.eye(d)
    return s, grad, hess


def _pair_terms(p, q, spec, derivs=False):
    diff = aligned_difference(p, q)
    return gauge_terms(diff.sup_norm_open(), diff.endpoint, spec.m, derivs)


def s_m(spec, p, q):
    """``S_m(p, q)``; non-negative, zero when the aligned paths coincide."""
    return float(_pair_terms(p, q, spec)[0])


def upsilon(spec, p, q):
    diff = aligned_difference(p, q)
    v = diff.endpoint
    s = gauge_terms(diff.sup_norm_open(), v, spec.m, False)[0]
    return float(s + spec.M * np.dot(v, v) ** spec.m)


def upsilon_bar(spec, p, q):
    return upsilon(spec, p, q) + (p.t - q.t) ** 2


def power_term_derivs(m, a0, v):
    """Derivatives of ``|v - a0|^{2m}`` (time derivative, gradient, Hessian).

    Vectorized over leading axes of ``v``.  For ``m = 1`` the rank-one Hessian
    term carries the coefficient ``4m(m-1) = 0`` and is dropped.
    """
    w = np.asarray(v, dtype=float) - np.asarray(a0, dtype=float)
    d = w.shape[-1]
    r2 = np.einsum("...i,...i->...", w, w)
    c1 = 2.0 * m * r2 ** (m - 1)
    grad = c1[..., None] * w
    hess = c1[..., None, None] * np.eye(d)
    if m > 1:
        c2 = 4.0 * m * (m - 1) * r2 ** (m - 2)
        hess = hess + c2[..., None, None] * (w[..., :, None] * w[..., None, :])
    dt = np.zeros(r2.shape) if r2.ndim else 0.0
    return dt, grad, hess


@dataclass(frozen=True)
class AnchoredGauge:
    """``(t, x) -> functional((t, x), (t_hat, a))`` for ``t >= t_hat``.

    ``kind`` picks ``"s"`` (``S_m``), ``"upsilon"`` or ``"upsilon_bar"``.
    """

    spec: GaugeSpec
    anchor: TimedPath
    kind: str = "s"
    _cache: list = field(default_factory=lambda: [None], init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("s", "upsilon", "upsilon_bar"):
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def t_hat(self):
        return self.anchor.t

    @property
    def a0(self):
        return self.anchor.path.endpoint

    def difference(self, p):
        if p.t < self.t_hat:
            raise ValueError("evaluation time precedes the anchor time")
        x = p.path
        # vertical bumps only move the endpoint and D(bump(y, v)) = bump(D(y), v);
        # keep the difference of the unbumped path so bump stencils skip the grid merge
        if len(x.nodes) > 2 and x.nodes[-2] == 0.0:
            hit = self._cache[0]
            if not (hit is not None and hit[0] == p.t and hit[1].nodes.shape[0] == x.nodes.shape[0] - 1
                    and np.array_equal(hit[1].nodes, x.nodes[:-1]) and np.array_equal(hit[1].values, x.values[:-1])):
                base = HistoryPath._raw(x.nodes[:-1], x.values[:-1])
                hit = (p.t, base, base - shift(self.anchor.path, p.t - self.t_hat))
                self._cache[0] = hit
            return bump(hit[2], x.values[-1] - hit[1].values[-1])
        diff = x - shift(self.anchor.path, p.t - self.t_hat)
        self._cache[0] = (p.t, x, diff)
        return diff

    def terms(self, p):
        diff = self.difference(p)
        return gauge_terms(diff.sup_norm_open(), diff.endpoint, self.spec.m)

    def __call__(self, p):
        diff = self.difference(p)
        v = diff.endpoint
        val = float(gauge_terms(diff.sup_norm_open(), v, self.spec.m, False)[0])
        if self.kind != "s":
            val += self.spec.M * float(np.dot(v, v) ** self.spec.m)
        if self.kind == "upsilon_bar":
            val += (p.t - self.t_hat) ** 2
        return val

    def derivatives(self, p):
        """``(dt, dx, dxx)`` of the selected functional."""
        _, g, h = self.terms(p)
        dt = 0.0
        if self.kind != "s":
            _, gp, hp = power_term_derivs(self.spec.m, self.a0, p.path.endpoint)
            g = g + self.spec.M * gp
            h = h + self.spec.M * hp
        if self.kind == "upsilon_bar":
            dt = 2.0 * (p.t - self.t_hat)
        return dt, g, h

    def along(self, traj):
        """Value and derivatives on every grid point of a trajectory.

        Requires ``traj.t0 >= t_hat``.  On step ``k`` the aligned difference is
        the initial difference shifted by ``k dt`` with the new segment
        ``X(r) - a(0)`` appended, so its running sup is a cumulative max.
        """
        if traj.t0 < self.t_hat:
            raise ValueError("trajectory starts before the anchor time")
        d0 = traj.xi - shift(self.anchor.path, traj.t0 - self.t_hat)
        a0 = self.a0
        v = traj.states - a0
        nv = np.linalg.norm(v, axis=-1)
        run = np.maximum.accumulate(nv[:, 1:], axis=1) if nv.shape[1] > 1 else nv[:, :0]
        sup_minus = np.empty_like(nv)
        sup_minus[:, 0] = d0.sup_norm_open()
        sup_minus[:, 1:] = np.maximum(d0.sup_norm(), run)
        s, g, h = gauge_terms(sup_minus, v, self.spec.m)
        times = traj.t0 + traj.dt * np.arange(nv.shape[1])
        ft = np.zeros_like(s)
        if self.kind != "s":
            _, gp, hp = power_term_derivs(self.spec.m, a0, traj.states)
            s = s + self.spec.M * nv ** (2 * self.spec.m)
            g = g + self.spec.M * gp
            h = h + self.spec.M * hp
        if self.kind == "upsilon_bar":
            s = s + (times - self.t_hat) ** 2
            ft = ft + 2.0 * (times - self.t_hat)
        return s, ft, g, h

    def as_functional(self):
        return FunctionalWithDerivatives(
            eval=self.__call__,
            dt=lambda p: self.derivatives(p)[0],
            dx=lambda p: self.derivatives(p)[1],
            dxx=lambda p: self.derivatives(p)[2],
            along=self.along,
            name=f"{self.kind}[m={self.spec.m},M={self.spec.M}]",
        )


def grad_s_m(anchored, p):
    return anchored.terms(p)[1]


def hess_s_m(anchored, p):
    return anchored.terms(p)[2]


def full_upsilon_derivs(anchored, p, bar=True):
    """``(dt, dx, dxx)`` of ``Y`` (or ``Ybar``) anchored at ``anchored.anchor``."""
    kind = "upsilon_bar" if bar else "upsilon"
    return AnchoredGauge(anchored.spec, anchored.anchor, kind).derivatives(p)


def is_near_kink(anchored, p, rel=1e-3):
    """True when ``|v|`` is within relative distance ``rel`` of ``sup_minus``."""
    diff = anchored.difference(p)
    r = float(np.linalg.norm(diff.endpoint))
    sm = diff.sup_norm_open()
    return abs(r - sm) <= rel * max(sm, r, 1e-300)


# -- batched same-grid evaluation ------------------------------------------------


def upsilon_batch(spec, values):
    """``Y^{m,M}`` of many same-grid paths against zero, at equal times.

    ``values`` has shape ``(B, K, d)`` with the last node at ``theta = 0``;
    the paths are taken piecewise linear so the sup is attained at nodes.
    """
    values = np.asarray(values, dtype=float)
    norms = np.linalg.norm(values, axis=-1)
    v = values[:, -1, :]
    s = gauge_terms(norms[:, :-1].max(axis=1), v, spec.m, False)[0]
    return s + spec.M * np.einsum("bi,bi->b", v, v) ** spec.m, norms.max(axis=1)


@dataclass
class InequalityCheck:
    name: str
    passed: bool
    worst_slack: float
    samples: int
    skipped: bool = False

    def row(self):
        return [self.name, "skip" if self.skipped else ("pass" if self.passed else "fail"),
                repr(self.worst_slack), str(self.samples)]


# Relative rounding allowance for inequalities that hold with equality on
# part of the domain (e.g. the lower bound when x(0) = 0).
ROUND_TOL = 1e-12


def verify_inequalities(spec, samples, rng, d=1, mixed_samples=None):
    """Run the two-sided bound, subadditivity and lower gauge bound checks.

    Slack is reported relative to the larger side, so a negative slack is a
    violation.  The two-sided bound and subadditivity are skipped (not failed)
    when ``M < 3``.  The lower gauge bound uses ``Ybar`` of the given spec
    with mixed times.
    """
    from .paths import random_path_values, random_paths

    out = []
    m, M = spec.m, spec.M
    x = random_path_values(rng, samples, d)
    y = random_path_values(rng, samples, d)
    ux, nx = upsilon_batch(spec, x)
    low = nx ** (2 * m)
    high = M * low
    scale = np.maximum(high, 1e-300)
    slack = np.minimum(ux - low, high - ux) / scale
    worst = float(slack.min())
    out.append(InequalityCheck("two_sided_bound", worst >= -ROUND_TOL, worst, samples, not spec.bounds_apply))

    uy, _ = upsilon_batch(spec, y)
    uxy, _ = upsilon_batch(spec, x + y)
    rhs = 2.0 ** (2 * m - 1) * (ux + uy)
    slack = (rhs - uxy) / np.maximum(rhs, 1e-300)
    worst = float(slack.min())
    out.append(InequalityCheck("subadditivity", worst >= -ROUND_TOL, worst, samples, not spec.bounds_apply))

    k = samples if mixed_samples is None else mixed_samples
    px = random_paths(rng, k, d)
    py = random_paths(rng, k, d)
    ts = rng.uniform(0.0, 2.0, size=(k, 2))
    worst = np.inf
    for a, b, (t, s) in zip(px, py, ts):
        p, q = TimedPath(t, a), TimedPath(s, b)
        ub = upsilon_bar(spec, p, q)
        n = aligned_difference(p, q).sup_norm()
        lhs = n ** (2 * m) + (t - s) ** 2
        worst = min(worst, (ub - lhs) / max(ub, 1e-300))
    out.append(InequalityCheck("gauge_lower_bound", bool(worst >= -ROUND_TOL), float(worst), k))
    return out


def gauge_property_check(spec, pairs, rng, d=1):
    """Largest ``d_inf / (Ybar^{1/2m} + Ybar^{1/2})`` over random pairs.

    A ratio ``<= 1`` on every pair is the empirical gauge-type property.
    """
    from .paths import d_infinity, random_paths

    px = random_paths(rng, pairs, d)
    py = random_paths(rng, pairs, d)
    # scale half the pairs down so small-distance behaviour is exercised
    shrink = np.where(rng.uniform(size=pairs) < 0.5, rng.uniform(1e-3, 1.0, size=pairs), 1.0)
    ts = rng.uniform(0.0, 2.0, size=(pairs, 2))
    worst = 0.0
    for a, b, c, (t, s) in zip(px, py, shrink, ts):
        p = TimedPath(t, a)
        q = TimedPath(t + c * (s - t), a + (b - a) * c)
        delta = upsilon_bar(spec, p, q)
        bound = delta ** (1.0 / (2 * spec.m)) + delta**0.5
        dist = d_infinity(p, q)
        if bound == 0.0:
            ratio = 0.0 if dist == 0.0 else np.inf
        else:
            ratio = dist / bound
        worst = max(worst, ratio)
    return float(worst)


def counterexample_pair(n, left_horizon=4.0):
    """A pair with ``Ybar -> 0`` while the unshifted distance stays ``>= 1``.

    ``x^n`` ramps from 0 to 1 on ``[-1/n, 0]`` and is considered at time 0;
    ``y^n`` ramps on ``[-2/n, -1/n]``, stays at 1, and is considered at time
    ``1/n``.  Shifting ``x^n`` by ``1/n`` reproduces ``y^n`` exactly.
    """
    if n < 1 or 2.0 / n >= left_horizon:
        raise ValueError("need 2/n < left_horizon")
    x = HistoryPath([-left_horizon, -1.0 / n, 0.0], [0.0, 0.0, 1.0])
    y = HistoryPath([-left_horizon, -2.0 / n, -1.0 / n, 0.0], [0.0, 0.0, 1.0, 1.0])
    return TimedPath(0.0, x), TimedPath(1.0 / n, y)


def anchored_trajectory_values(anchored, traj, path=0):
    """Slow reference for :meth:`AnchoredGauge.along` built from explicit histories."""
    kp1 = traj.states.shape[1]
    out = np.empty(kp1)
    for k in range(kp1):
        s = traj.t0 + k * traj.dt
        out[k] = anchored(TimedPath(s, history_at(traj, s, path)))
    return out


# -- analytic vs finite-difference derivatives ----------------------------------------


@dataclass
class DerivativeRow:
    functional: str
    probe: int
    coordinate: str
    analytic: float
    fd: float
    abs_err: float
    rel_err: float

    def row(self):
        return [self.functional, str(self.probe), self.coordinate, repr(self.analytic), repr(self.fd),
                repr(self.abs_err), repr(self.rel_err)]


def _compare(a, b, rtol, atol):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0
    scale = float(max(np.max(np.abs(a)), np.max(np.abs(b)))) if np.size(a) else 0.0
    return err, err / scale if scale > 0 else 0.0, err <= max(rtol * scale, atol)


def derivative_check(probes, seed=0, ms=(1, 2, 3), M=3.0, d=2, rtol=1e-5, atol=1e-7, kink_rel=1e-3,
                     max_draws=None):
    """Compare analytic derivatives of the anchored gauges with finite differences.

    Each probe draws a random anchor ``(t_hat, a)``, a later time ``t`` and a
    path ``x``; ``m`` cycles through ``ms``.  Compared quantities: the vertical
    gradient and Hessian of ``S_m`` and of the power term ``M|x(0)-a(0)|^{2m}``,
    and all three derivatives of ``Ybar``.  Draws within ``kink_rel`` of the
    non-smooth set are rejected (and counted) until ``probes`` points have
    been compared.

    Returns ``(rows, summary)``.  A comparison passes when the max-abs error
    is at most ``max(rtol * scale, atol)``; ``worst_tol_ratio`` in the summary
    is the largest error over that threshold.
    """
    from .calculus import adaptive_fd, horizontal_fd, power_functional, vertical_grad_fd, vertical_hess_fd
    from .paths import random_paths
    from .rng import probe_generator

    rng = probe_generator(seed, 5)
    max_draws = 20 * probes if max_draws is None else max_draws
    rows = []
    passed = kinks = failed = i = 0
    worst = 0.0
    for _ in range(max_draws):
        if i == probes:
            break
        m = ms[i % len(ms)]
        spec = GaugeSpec(m, M)
        a, x = random_paths(rng, 2, d, 16)
        t_hat = float(rng.uniform(0.0, 1.0))
        t = t_hat + float(rng.uniform(0.0, 1.0))
        anchor, p = TimedPath(t_hat, a), TimedPath(t, x)
        g_s = AnchoredGauge(spec, anchor, "s")
        if is_near_kink(g_s, p, kink_rel):
            kinks += 1
            continue
        g_bar = AnchoredGauge(spec, anchor, "upsilon_bar")
        power = power_functional(m, a.endpoint)
        diff = g_s.difference(p)
        r = float(np.linalg.norm(diff.endpoint))
        # nested bumps move the endpoint by up to sqrt(2) h; stay off the kink
        h_max = 0.3 * abs(diff.sup_norm_open() - r) if diff.sup_norm_open() > 0 else 0.1
        h_max = min(h_max, 0.1 * max(1.0, diff.sup_norm_open()))

        # two Richardson rounds permit steps large enough to keep the rounding
        # floor (eps |f| / h^2, with |f| up to ~1e4 for m = 3) below atol
        def grad(f):
            return adaptive_fd(lambda h: vertical_grad_fd(f, p, h), h_max, rounds=2)[0]

        def hess(f):
            return adaptive_fd(lambda h: vertical_hess_fd(f, p, h), h_max, rounds=2)[0]

        _, gs, hs = g_s.derivatives(p)
        _, gp, hp = power_term_derivs(m, a.endpoint, x.endpoint)
        ft, gb, hb = g_bar.derivatives(p)
        # time enters Ybar only through (t - t_hat)^2, so a coarse step is exact
        # up to Richardson cancellation and keeps rounding small
        ht = 1e-2 * max(1.0, t)
        checks = [
            (f"S_{m}", "dx", gs, grad(g_s)),
            (f"S_{m}", "dxx", hs, hess(g_s)),
            (f"power_{m}", "dx", M * gp, M * grad(power)),
            (f"power_{m}", "dxx", M * hp, M * hess(power)),
            (f"Ybar_{m}", "dt", np.array([ft]), np.array([horizontal_fd(g_bar, p, ht, richardson=True)])),
            (f"Ybar_{m}", "dx", gb, grad(g_bar)),
            (f"Ybar_{m}", "dxx", hb, hess(g_bar)),
        ]
        ok_all = True
        for name, coord, an, fd in checks:
            for idx in np.ndindex(np.shape(an)):
                e = abs(float(an[idx]) - float(fd[idx]))
                sc = max(abs(float(an[idx])), abs(float(fd[idx])))
                label = coord + ("" if coord == "dt" else "[" + ",".join(map(str, idx)) + "]")
                rows.append(DerivativeRow(name, i, label, float(an[idx]), float(fd[idx]), e, e / sc if sc > 0 else 0.0))
            err, rel, ok = _compare(an, fd, rtol, atol)
            # error measured against the tolerance it had to meet
            worst = max(worst, err / max(rtol * max(np.max(np.abs(an)), np.max(np.abs(fd))), atol))
            ok_all &= ok
        passed += ok_all
        failed += not ok_all
        i += 1
    return rows, {"probes": i, "passed": passed, "failed": failed, "kink_rejected": kinks, "worst_tol_ratio": worst}
