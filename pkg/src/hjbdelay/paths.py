"""Discretized past trajectories on (-inf, 0] and the operations on them.

A :class:`HistoryPath` is stored as a list of breakpoints ``(theta_j, x_j)``
with non-decreasing times.  Between consecutive breakpoints the path is
linear; a repeated time is a jump, and the last breakpoint at a given time is
the (right-continuous) value there.  Left of the first breakpoint the path is
identically zero, and the first breakpoint carries the value zero.

This one representation covers piecewise-linear continuous paths, the
piecewise-constant cadlag paths, and continuous paths after a vertical bump
at ``theta = 0`` -- all exactly, so sup norms and differences are computed
without interpolation error.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "HistoryPath",
    "TimedPath",
    "PathError",
    "sup_norm",
    "shift",
    "bump",
    "d_infinity",
    "norm1_distance",
    "history_at",
    "random_path_values",
    "random_paths",
    "write_path_csv",
    "read_path_csv",
]

REGULARITIES = ("continuous", "cadlag")


class PathError(ValueError):
    """Raised when a path violates its structural invariants."""


class HistoryPath:
    """A past trajectory with support truncated to ``[-left_horizon, 0]``.

    Parameters
    ----------
    nodes : array_like, shape (K+1,)
        Breakpoint times, starting at ``-left_horizon`` and ending at ``0``.
    values : array_like, shape (K+1,) or (K+1, d)
        Path values at the nodes.  ``values[0]`` must be zero.
    regularity : {"continuous", "cadlag"}
        ``"continuous"`` interpolates linearly between nodes (nodes must be
        strictly increasing).  ``"cadlag"`` builds the right-continuous
        piecewise-constant path taking ``values[j]`` on ``[nodes[j], nodes[j+1])``.
    """

    __slots__ = ("nodes", "values")

    def __init__(self, nodes, values, regularity="continuous"):
        nodes = np.array(nodes, dtype=float)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if regularity not in REGULARITIES:
            raise PathError(f"unknown regularity {regularity!r}")
        if nodes.ndim != 1 or values.ndim != 2 or len(nodes) != len(values):
            raise PathError("nodes and values must have matching length")
        if len(nodes) < 2:
            raise PathError("a path needs at least two nodes")
        if regularity == "continuous":
            if np.any(np.diff(nodes) <= 0):
                raise PathError("nodes must be strictly increasing")
        else:
            if np.any(np.diff(nodes) <= 0):
                raise PathError("nodes must be strictly increasing")
            nodes, values = _expand_steps(nodes, values)
        self._init_raw(nodes, values)

    def _init_raw(self, nodes, values):
        if nodes[-1] != 0.0:
            raise PathError("last node must be exactly 0")
        if nodes[0] >= 0.0:
            raise PathError("left horizon must be positive")
        if np.any(np.diff(nodes) < 0):
            raise PathError("nodes must be non-decreasing")
        if np.any(values[0] != 0.0):
            raise PathError("value at the left horizon must be the zero vector")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(nodes)):
            raise PathError("path values must be finite")
        nodes.setflags(write=False)
        values.setflags(write=False)
        self.nodes = nodes
        self.values = values

    @classmethod
    def _raw(cls, nodes, values):
        obj = cls.__new__(cls)
        obj._init_raw(np.asarray(nodes, dtype=float), np.asarray(values, dtype=float))
        return obj

    @classmethod
    def _trusted(cls, nodes, values):
        """Skip validation; for transforms of an already valid path."""
        obj = cls.__new__(cls)
        nodes.setflags(write=False)
        values.setflags(write=False)
        obj.nodes = nodes
        obj.values = values
        return obj

    @classmethod
    def zero(cls, d=1, left_horizon=1.0):
        return cls([-left_horizon, 0.0], np.zeros((2, d)))

    @classmethod
    def from_function(cls, fn, nodes):
        """Sample ``fn(theta) -> d-vector`` on ``nodes`` (first value forced to zero)."""
        nodes = np.asarray(nodes, dtype=float)
        vals = np.array([np.atleast_1d(fn(th)) for th in nodes], dtype=float)
        vals[0] = 0.0
        return cls(nodes, vals)

    # -- basic properties ---------------------------------------------------

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def left_horizon(self):
        return -float(self.nodes[0])

    @property
    def regularity(self):
        return "continuous" if np.all(np.diff(self.nodes) > 0) else "cadlag"

    @property
    def endpoint(self):
        """x(0)."""
        return self.values[-1]

    def left_limit_at_zero(self):
        """x(0-)."""
        return self.values[self._first_zero_index()]

    def _first_zero_index(self):
        return int(np.searchsorted(self.nodes, 0.0, side="left"))

    def __call__(self, theta):
        return self.value_at(theta)

    def value_at(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = _evaluate(self.nodes, self.values, theta, "right")
        return out[0] if out.shape[0] == 1 else out

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def sup_norm_open(self):
        """sup over theta < 0 of |x(theta)| (the left limit at 0 counts)."""
        k = self._first_zero_index()
        return float(np.max(np.linalg.norm(self.values[: k + 1], axis=1)))

    # -- arithmetic on the union grid ---------------------------------------

    def _combine(self, other, op):
        if not isinstance(other, HistoryPath):
            return NotImplemented
        if other.d != self.d:
            raise PathError("dimension mismatch")
        taus = np.union1d(self.nodes, other.nodes)
        lx = _evaluate(self.nodes, self.values, taus, "left")
        rx = _evaluate(self.nodes, self.values, taus, "right")
        ly = _evaluate(other.nodes, other.values, taus, "left")
        ry = _evaluate(other.nodes, other.values, taus, "right")
        left = op(lx, ly)
        right = op(rx, ry)
        dup = np.any(left != right, axis=1)
        nodes = np.repeat(taus, np.where(dup, 2, 1))
        vals = np.empty((len(nodes), self.d))
        pos = np.cumsum(np.where(dup, 2, 1)) - 1
        vals[pos] = right
        vals[pos[dup] - 1] = left[dup]
        return HistoryPath._raw(nodes, vals)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __mul__(self, c):
        return HistoryPath._raw(self.nodes.copy(), self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def equals(self, other, tol=0.0):
        return (self - other).sup_norm() <= tol

    def __repr__(self):
        return (
            f"HistoryPath(d={self.d}, nodes={len(self.nodes)}, "
            f"left_horizon={self.left_horizon:g}, regularity={self.regularity!r})"
        )


def _expand_steps(nodes, values):
    k = len(nodes) - 1
    out_n = [nodes[0]]
    out_v = [values[0]]
    for j in range(k):
        out_n += [nodes[j + 1], nodes[j + 1]]
        out_v += [values[j], values[j + 1]]
    out_n = np.array(out_n)
    out_v = np.array(out_v)
    # drop duplicates that are not real jumps
    keep = np.ones(len(out_n), dtype=bool)
    for i in range(1, len(out_n)):
        if out_n[i] == out_n[i - 1] and np.array_equal(out_v[i], out_v[i - 1]):
            keep[i] = False
    return out_n[keep], out_v[keep]


def _evaluate(nodes, values, taus, side):
    """Evaluate the path at ``taus``; ``side="left"`` gives left limits."""
    d = values.shape[1]
    out = np.zeros((len(taus), d))
    if side == "right":
        idx = np.searchsorted(nodes, taus, side="right") - 1
        inside = idx >= 0
        idx_c = np.clip(idx, 0, len(nodes) - 1)
        exact = inside & (nodes[idx_c] == taus)
        out[exact] = values[idx_c[exact]]
        interp = inside & ~exact & (idx_c < len(nodes) - 1)
        a = idx_c[interp]
        b = a + 1
    else:
        idx = np.searchsorted(nodes, taus, side="left")
        idx_c = np.clip(idx, 0, len(nodes) - 1)
        exact = (idx < len(nodes)) & (nodes[idx_c] == taus)
        out[exact] = values[idx_c[exact]]
        interp = ~exact & (idx > 0) & (idx < len(nodes))
        b = idx_c[interp]
        a = b - 1
    if np.any(interp):
        w = (taus[interp] - nodes[a]) / (nodes[b] - nodes[a])
        out[interp] = values[a] + w[:, None] * (values[b] - values[a])
    return out


@dataclass(frozen=True)
class TimedPath:
    """A point ``(t, x)`` of the time-path space."""

    t: float
    path: HistoryPath

    def __post_init__(self):
        if not self.t >= 0:
            raise PathError("time must be non-negative")


def sup_norm(x):
    """``|x|_C``; maximum Euclidean norm over the breakpoints.

    The Euclidean norm is convex along each linear piece, so the supremum is
    attained at a breakpoint.
    """
    return x.sup_norm()


def shift(x, h):
    """Dupire's frozen shift: ``x(0)`` on ``[-h, 0]``, ``x(theta + h)`` before."""
    if h < 0:
        raise PathError("shift must be non-negative")
    if h == 0:
        return x
    nodes = np.append(x.nodes - h, 0.0)
    values = np.vstack([x.values, x.values[-1]])
    return HistoryPath._raw(nodes, values)


def bump(x, v):
    """Vertical perturbation ``x + v 1_{0}``; the result is cadlag."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (x.d,) or not np.all(np.isfinite(v)):
        raise PathError("bump must be a finite vector of the path dimension")
    if len(x.nodes) >= 2 and x.nodes[-2] == 0.0:
        values = x.values.copy()
        values[-1] = values[-1] + v
        return HistoryPath._trusted(x.nodes, values)
    nodes = np.append(x.nodes, 0.0)
    values = np.vstack([x.values, x.values[-1] + v])
    return HistoryPath._trusted(nodes, values)


def aligned_difference(p, q):
    """``x_{(s-t) v 0} - y_{(t-s) v 0}`` for ``p = (t, x)``, ``q = (s, y)``."""
    gap = q.t - p.t
    if gap >= 0:
        return shift(p.path, gap) - q.path
    return p.path - shift(q.path, -gap)


def d_infinity(a, b):
    """The metric ``|l - s| + |x_{l-s} - y|_C`` (earlier path shifted forward)."""
    return abs(b.t - a.t) + aligned_difference(a, b).sup_norm()


def norm1_distance(a, b):
    """``|t - s| + |x - y|_C`` with no shift."""
    return abs(b.t - a.t) + (a.path - b.path).sup_norm()


def history_at(traj, s, path=0):
    """Extract ``X_s`` (``X_s(theta) = X(s + theta)``) for one simulated path.

    ``traj`` is a :class:`hjbdelay.sde.Trajectory`.  Grid times are used
    as-is; an off-grid ``s`` ends the history with the Euler interpolant.
    """
    t0, dt = traj.t0, traj.dt
    nsteps = traj.states.shape[1] - 1
    if s < t0 - 1e-12 or s > t0 + nsteps * dt + 1e-12:
        raise PathError(f"s={s} outside the simulated range")
    j_float = (s - t0) / dt
    j = int(round(j_float))
    on_grid = abs(j_float - j) <= 1e-9
    xi = traj.xi
    states = traj.states[path]
    if on_grid:
        lag = j * dt
        nodes = [xi.nodes - lag, (np.arange(1, j + 1) - j) * dt]
        values = [xi.values, states[1 : j + 1]]
    else:
        j = int(np.floor(j_float))
        frac = j_float - j
        lag = s - t0
        nodes = [xi.nodes - lag, np.arange(1, j + 1) * dt - lag, [0.0]]
        tail = states[j] + frac * (states[j + 1] - states[j])
        values = [xi.values, states[1 : j + 1], tail[None, :]]
    return HistoryPath._raw(np.concatenate(nodes), np.vstack(values))


# -- random paths for property tests ------------------------------------------


def random_path_values(rng, count, d=1, n_nodes=32, scale=2.0):
    """Node values i.i.d. uniform in ``[-scale, scale]^d``; first node zero."""
    vals = rng.uniform(-scale, scale, size=(count, n_nodes, d))
    vals[:, 0, :] = 0.0
    return vals


def random_paths(rng, count, d=1, n_nodes=32, left_horizon=4.0, scale=2.0):
    grid = np.linspace(-left_horizon, 0.0, n_nodes)
    vals = random_path_values(rng, count, d, n_nodes, scale)
    return [HistoryPath._raw(grid.copy(), v) for v in vals]


# -- CSV ------------------------------------------------------------------------


def write_path_csv(x, dest=None):
    """Write ``x`` as ``theta, x1..xd`` rows after a ``# key: value`` block."""
    buf = io.StringIO()
    buf.write(f"# regularity: {x.regularity}\n")
    buf.write(f"# left_horizon: {x.left_horizon!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta"] + [f"x{i + 1}" for i in range(x.d)])
    for th, v in zip(x.nodes, x.values):
        w.writerow([repr(float(th))] + [repr(float(c)) for c in v])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def read_path_csv(src):
    """Inverse of :func:`write_path_csv`; ``src`` is a path or the CSV text."""
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src):
        text = Path(src).read_text()
    else:
        text = src
    meta = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif line.strip():
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    data = np.array([[float(c) for c in r] for r in reader])
    if data.shape[1] != len(header):
        raise PathError("row width does not match header")
    x = HistoryPath._raw(data[:, 0], data[:, 1:])
    if "left_horizon" in meta and float(meta["left_horizon"]) != x.left_horizon:
        raise PathError("left_horizon metadata disagrees with the first node")
    return x
