"""Perturbed maximization with gauge penalties on finite path domains.

Given ``f`` bounded above and a start point that is ``epsilon``-maximal, the
search builds centers ``c_0 = start, c_1, ...`` with weights ``delta_i`` such
that the returned point ``x_hat`` satisfies

    (i)   rho(x_hat, c_0) <= epsilon / delta_0 and
          rho(x_hat, c_i) <= epsilon / (2^i delta_0),
    (ii)  f(x_hat) - sum_i delta_i rho(x_hat, c_i) >= f(c_0),
    (iii) x_hat strictly maximizes f - sum_i delta_i rho(., c_i) over the
          domain points whose time is not earlier than the start time.

Stage ``k`` maximizes ``f_k = f - sum_{i<=k} delta_i rho(., c_i)`` over the
candidates not earlier than ``c_k`` with ``f_k >= f_k(c_k)``.  Because
``f_{k+1} <= f_k`` with equality at ``c_{k+1}``, a move is followed by
termination; a final center at ``x_hat`` is appended only when another
candidate ties with it, which makes the maximum strict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gauge import DEFAULT_SPEC, gauge_terms, upsilon_bar
from .paths import HistoryPath, TimedPath

__all__ = [
    "SearchDomain",
    "LatticeDomain",
    "UpsilonBarGauge",
    "VariationalResult",
    "VariationalError",
    "borwein_preiss",
    "verify_result",
    "default_deltas",
    "random_lattice_domain",
]

TOL = 1e-12


class VariationalError(ValueError):
    """Precondition failure of the perturbed maximization."""


def default_deltas(k, delta0=1.0):
    return [delta0 * 2.0**-i for i in range(k)]


class UpsilonBarGauge:
    """``rho(p, q) = Ybar(p, q)`` for a gauge spec, usable as a penalty."""

    def __init__(self, spec=DEFAULT_SPEC):
        self.spec = spec

    def __call__(self, p, q):
        return upsilon_bar(self.spec, p, q)


class SearchDomain:
    """A finite, ordered list of time-path points."""

    def __init__(self, candidates):
        self.candidates = list(candidates)
        if not self.candidates:
            raise VariationalError("empty search domain")

    def __len__(self):
        return len(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    @property
    def times(self):
        return np.array([c.t for c in self.candidates])

    def index_of(self, p):
        for i, c in enumerate(self.candidates):
            if c is p:
                return i
        for i, c in enumerate(self.candidates):
            if c.t == p.t and c.path.nodes.shape == p.path.nodes.shape and np.array_equal(c.path.nodes, p.path.nodes) \
                    and np.array_equal(c.path.values, p.path.values):
                return i
        raise VariationalError("start point is not in the domain")

    def evaluate(self, f):
        return np.array([float(f(c)) for c in self.candidates])

    def rho_column(self, rho, center):
        c = self.candidates[center]
        return np.array([float(rho(p, c)) for p in self.candidates])


class LatticeDomain(SearchDomain):
    """Candidates on a common lattice: nodes ``-K h .. 0`` and times ``j h``.

    Shifts by a time difference are then index shifts, so ``Ybar`` against a
    center is evaluated for all candidates at once, exactly.
    """

    def __init__(self, h, values, steps):
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[..., None]
        self.h = float(h)
        self.values = values
        self.steps = np.asarray(steps, dtype=int)
        if np.any(self.steps < 0):
            raise VariationalError("times must be non-negative")
        if np.any(values[:, 0] != 0):
            raise VariationalError("first node value must be zero")
        nodes = -self.h * np.arange(values.shape[1] - 1, -1, -1)
        self.nodes = nodes
        super().__init__([TimedPath(float(s * self.h), HistoryPath._raw(nodes.copy(), v)) for s, v in zip(self.steps, values)])

    @property
    def times(self):
        return self.steps * self.h

    def _aligned_sup(self, center):
        """Sup norm and endpoint of ``x_{(s-t) v 0} - y_{(t-s) v 0}`` for all candidates.

        The shifted path extends left of the window by the shift; there the
        difference is minus the shifted path's early values, which enter as a
        prefix maximum.
        """
        B, K1, d = self.values.shape
        y, sy = self.values[center], self.steps[center]
        lag = self.steps - sy  # > 0: shift the center; < 0: shift the candidate
        idx = np.arange(K1)
        ny = np.maximum.accumulate(np.linalg.norm(y, axis=-1))
        sup = np.empty(B)
        end = np.empty((B, d))
        for g in np.unique(lag):
            rows = np.nonzero(lag == g)[0]
            j = np.clip(idx + abs(g), 0, K1 - 1)
            if g >= 0:
                diff = self.values[rows] - y[j][None]
                extra = ny[min(g, K1 - 1)]
            else:
                xs = self.values[rows]
                diff = xs[:, j] - y[None]
                extra = np.maximum.accumulate(np.linalg.norm(xs, axis=-1), axis=1)[:, min(-g, K1 - 1)]
            sup[rows] = np.maximum(np.linalg.norm(diff, axis=-1).max(axis=1), extra)
            end[rows] = diff[:, -1]
        return sup, end

    def rho_column(self, rho, center):
        if not isinstance(rho, UpsilonBarGauge):
            return super().rho_column(rho, center)
        sup, v = self._aligned_sup(center)
        s = gauge_terms(sup, v, rho.spec.m, False)[0]
        dt = (self.steps - self.steps[center]) * self.h
        return s + rho.spec.M * np.einsum("bi,bi->b", v, v) ** rho.spec.m + dt * dt


def random_lattice_domain(rng, size, n_nodes=33, h=0.125, max_step=16, d=1, scale=2.0):
    vals = rng.uniform(-scale, scale, size=(size, n_nodes, d))
    vals[:, 0] = 0.0
    steps = rng.integers(0, max_step + 1, size=size)
    return LatticeDomain(h, vals, steps)


@dataclass
class VariationalResult:
    maximizer: TimedPath
    index: int
    centers: list
    center_indices: list
    deltas: list
    perturbed_value: float
    iterations: int
    converged: bool = True
    history: list = field(default_factory=list)


def borwein_preiss(f, rho, deltas, epsilon, start, domain, max_iters=100, fvals=None):
    """Perturbed maximization on a finite domain (see the module docstring).

    ``f`` is a functional on TimedPath (or pass precomputed ``fvals``), ``rho``
    a gauge with ``rho(p, p) = 0``, ``deltas`` the positive weights (a
    sequence, or a callable ``i -> delta_i``), ``start`` a domain point or its
    index.
    """
    if len(domain) == 0:
        raise VariationalError("empty search domain")
    if not epsilon > 0:
        raise VariationalError("epsilon must be positive")
    dfun = deltas if callable(deltas) else (lambda i: deltas[i])
    i0 = start if isinstance(start, (int, np.integer)) else domain.index_of(start)
    fv = domain.evaluate(f) if fvals is None else np.asarray(fvals, dtype=float)
    if not np.all(np.isfinite(fv)):
        raise VariationalError("f must be finite on the domain")
    if fv[i0] < fv.max() - epsilon:
        raise VariationalError(f"start is not epsilon-maximal: f(start)={fv[i0]!r}, sup={fv.max()!r}")
    times = domain.times
    t0 = times[i0]
    centers = [i0]
    ds = [float(dfun(0))]
    if not ds[0] > 0:
        raise VariationalError("deltas must be positive")
    fk = fv - ds[0] * domain.rho_column(rho, i0)
    history = [float(fk[i0])]
    it = 0
    converged = False
    while it < max_iters:
        it += 1
        ck = centers[-1]
        ok = (times >= times[ck]) & (fk >= fk[ck])
        cand = np.nonzero(ok)[0]
        j = int(cand[np.argmax(fk[cand])])
        if fk[j] - fk[ck] > TOL:
            centers.append(j)
            ds.append(float(dfun(len(centers) - 1)))
            if not ds[-1] > 0:
                raise VariationalError("deltas must be positive")
            fk = fk - ds[-1] * domain.rho_column(rho, j)
            history.append(float(fk[j]))
            continue
        converged = True
        break
    x_hat = centers[-1]
    if converged:
        # another admissible point tying with x_hat would break strictness
        others = (times >= t0) & (np.arange(len(domain)) != x_hat)
        if np.any(others & (fk >= fk[x_hat] - TOL)):
            centers.append(x_hat)
            ds.append(float(dfun(len(centers) - 1)))
            fk = fk - ds[-1] * domain.rho_column(rho, x_hat)
    return VariationalResult(
        domain[x_hat], x_hat, [domain[c] for c in centers], centers, ds, float(fk[x_hat]), it, converged, history
    )


def verify_result(result, f, rho, epsilon, domain, fvals=None):
    """Exhaustively check properties (i)-(iii); returns a dict of booleans.

    (iii) is checked over distinct domain points (positive ``rho`` to the
    maximizer) not earlier than the start.
    """
    fv = domain.evaluate(f) if fvals is None else np.asarray(fvals, dtype=float)
    cols = [domain.rho_column(rho, c) for c in result.center_indices]
    pen = sum(d * c for d, c in zip(result.deltas, cols))
    F = fv - pen
    k = result.index
    d0 = result.deltas[0]
    r_hat = [col[k] for col in cols]
    prop_i = r_hat[0] <= epsilon / d0 + TOL and all(
        r <= epsilon / (2.0**i * d0) + TOL for i, r in enumerate(r_hat)
    )
    prop_ii = F[k] >= fv[result.center_indices[0]] - TOL
    times = domain.times
    t0 = times[result.center_indices[0]]
    dist = domain.rho_column(rho, k)
    others = (times >= t0) & (dist > 0)
    prop_iii = bool(np.all(F[others] < F[k]))
    return {"i": bool(prop_i), "ii": bool(prop_ii), "iii": prop_iii, "perturbed": F}
