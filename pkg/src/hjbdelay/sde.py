"""Euler-Maruyama simulation of controlled SDEs with infinite delay.

The simulator carries a compact sufficient statistic of the history instead
of the whole past path: the endpoint ``X(s)``, the running sup norm
``|X_s|_C`` and, for each requested rate ``r``, the exponential memory
``int_{-inf}^0 e^{r theta} X_s(theta) d theta``.  All three are updated
exactly for the piecewise-linear Euler interpolant, so coefficients written
against a :class:`HistoryState` see the same numbers they would see on the
explicit history returned by :func:`hjbdelay.paths.history_at`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .paths import HistoryPath, random_paths
from .rng import MAIN, PAIRS, brownian_increments, probe_generator

__all__ = [
    "theta",
    "lambda_uniqueness",
    "HistoryState",
    "Coefficients",
    "SimConfig",
    "Trajectory",
    "SimulationError",
    "memory_weights",
    "path_memory",
    "propagate",
    "euler_simulate",
    "map_chunks",
    "sample_states",
    "zero_coefficients",
    "brownian",
    "ornstein_uhlenbeck",
    "geometric_brownian",
    "lipschitz_probe",
    "LipschitzReport",
    "moment_estimates",
    "MomentReport",
    "coupling_constant",
]


def theta(L):
    """Discount threshold ``5/2 L^2 + L`` above which the cost is finite."""
    if L <= 0:
        raise ValueError("L must be positive")
    return 2.5 * L * L + L


def lambda_uniqueness(L):
    """Discount threshold ``(12 + 15 L) L`` used for uniqueness."""
    if L <= 0:
        raise ValueError("L must be positive")
    return (12.0 + 15.0 * L) * L


class SimulationError(RuntimeError):
    """Non-finite state or coefficient output during a simulation."""


# -- exponential memory ---------------------------------------------------------


def memory_weights(rate, length):
    """Weights ``(w_a, w_b)`` so a linear piece from ``u`` to ``v`` of the given
    length contributes ``w_a u + w_b v`` to ``int e^{-rate (end - s)} x(s) ds``.
    """
    length = np.asarray(length, dtype=float)
    x = rate * length
    with np.errstate(divide="ignore", invalid="ignore"):
        w0 = np.where(x > 0, -np.expm1(-x) / rate, length)
        # (1 - e^{-x}(1 + x)) / x^2, with a series for small x
        big = (1.0 - np.exp(-x) * (1.0 + x)) / np.where(x > 0, x * x, 1.0)
    small = 0.5 - x / 3.0 + x * x / 8.0 - x**3 / 30.0
    g = np.where(x < 1e-3, small, big)
    w1 = w0 - length * g
    return w0 - w1, w1


def path_memory(x, rate):
    """``int_{-inf}^0 e^{rate theta} x(theta) d theta`` of a :class:`HistoryPath`."""
    dn = np.diff(x.nodes)
    wa, wb = memory_weights(rate, dn)
    decay = np.exp(rate * x.nodes[1:])
    return np.einsum("j,jd->d", decay * wa, x.values[:-1]) + np.einsum("j,jd->d", decay * wb, x.values[1:])


@dataclass
class HistoryState:
    """Batched summary of histories: endpoint, running sup and memories.

    ``endpoint`` has shape ``batch + (d,)``; ``sup`` has shape ``batch``;
    ``memory`` maps each rate to an array shaped like ``endpoint``.
    """

    endpoint: np.ndarray
    sup: np.ndarray
    memory: dict = field(default_factory=dict)

    @classmethod
    def from_path(cls, x, rates=()):
        return cls(
            np.array(x.endpoint, dtype=float),
            np.asarray(x.sup_norm(), dtype=float),
            {r: path_memory(x, r) for r in rates},
        )

    @classmethod
    def from_paths(cls, paths, rates=()):
        states = [cls.from_path(p, rates) for p in paths]
        return cls(
            np.stack([s.endpoint for s in states]),
            np.array([float(s.sup) for s in states]),
            {r: np.stack([s.memory[r] for s in states]) for r in rates},
        )

    @property
    def batch_shape(self):
        return self.endpoint.shape[:-1]

    @property
    def d(self):
        return self.endpoint.shape[-1]

    def broadcast_to(self, shape):
        shape = tuple(shape)
        return HistoryState(
            np.broadcast_to(self.endpoint, shape + (self.d,)).copy(),
            np.broadcast_to(self.sup, shape).copy(),
            {r: np.broadcast_to(m, shape + (self.d,)).copy() for r, m in self.memory.items()},
        )

    def take(self, index):
        """Index the batch axes (``index`` must not touch the trailing axis)."""
        return HistoryState(
            self.endpoint[index],
            self.sup[index],
            {r: m[index] for r, m in self.memory.items()},
        )

    def advance(self, x_new, dt, _weights=None):
        """State after appending the linear segment ``endpoint -> x_new``."""
        mem = {}
        for r, m in self.memory.items():
            if _weights is not None:
                decay, wa, wb = _weights[r]
            else:
                decay = math.exp(-r * dt)
                wa, wb = (float(w) for w in memory_weights(r, dt))
            mem[r] = decay * m + wa * self.endpoint + wb * x_new
        if x_new.shape[-1] == 1:
            sup = np.maximum(self.sup, np.abs(x_new[..., 0]))
        else:
            sup = np.maximum(self.sup, np.linalg.norm(x_new, axis=-1))
        return HistoryState(x_new, sup, mem)


def euler_increment(b, s, dw, dt):
    """``b dt + s dw`` for batched drift ``(..., d)``, vol ``(..., d, n)``, noise ``(..., n)``."""
    if s.shape[-2:] == (1, 1):
        return b * dt + s[..., 0] * dw
    return b * dt + np.einsum("...ij,...j->...i", s, dw)


def _step_weights(rates, dt):
    out = {}
    for r in rates:
        wa, wb = memory_weights(r, dt)
        out[r] = (math.exp(-r * dt), float(wa), float(wb))
    return out


# -- coefficients ---------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    """Drift, volatility and running cost acting on batched history states.

    ``drift(state, u) -> batch + (d,)``, ``vol(state, u) -> batch + (d, n)``,
    ``cost(state, u) -> batch``; ``u`` broadcasts against the batch shape.
    ``L`` is the declared Lipschitz/growth constant.  ``growth_ok`` is false
    for fixtures whose cost grows faster than linearly.
    """

    drift_fn: Callable
    vol_fn: Callable
    cost_fn: Callable
    L: float
    d: int = 1
    n: int = 1
    memory_rates: tuple = ()
    name: str = "custom"
    growth_ok: bool = True
    point_dependent: Optional[bool] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("declared L must be positive")

    def drift(self, state, u):
        return self.drift_fn(state, u)

    def vol(self, state, u):
        return self.vol_fn(state, u)

    def cost(self, state, u):
        return self.cost_fn(state, u)

    def state_of(self, x):
        return HistoryState.from_path(x, self.memory_rates)

    # single-path forms
    def b(self, x, u):
        return np.asarray(self.drift(self.state_of(x), np.asarray(u, dtype=float)), dtype=float)

    def sigma(self, x, u):
        return np.asarray(self.vol(self.state_of(x), np.asarray(u, dtype=float)), dtype=float)

    def q(self, x, u):
        return float(self.cost(self.state_of(x), np.asarray(u, dtype=float)))

    def with_(self, **kw):
        return replace(self, **kw)


def _full(state, u, tail):
    shape = np.broadcast_shapes(state.batch_shape, np.shape(u))
    return shape + tail


def zero_coefficients(d=1, n=1, L=1.0):
    return Coefficients(
        lambda st, u: np.zeros(_full(st, u, (d,))),
        lambda st, u: np.zeros(_full(st, u, (d, n))),
        lambda st, u: np.zeros(_full(st, u, ())),
        L, d, n, name="zero", point_dependent=True,
    )


def brownian(d=1, cost=None, L=1.0):
    """``dX = dW``; ``cost`` defaults to ``|x(0)|^2``."""
    cost = cost or (lambda st, u: np.broadcast_to(np.einsum("...i,...i->...", st.endpoint, st.endpoint), _full(st, u, ())))
    return Coefficients(
        lambda st, u: np.zeros(_full(st, u, (d,))),
        lambda st, u: np.broadcast_to(np.eye(d), _full(st, u, (d, d))),
        cost, L, d, d, name="brownian", growth_ok=False, point_dependent=True,
    )


def ornstein_uhlenbeck(rate=1.0, sigma0=1.0, L=1.0):
    """``dX = -rate X(s) ds + sigma0 dW`` in one dimension, cost ``x(0)^2 ^ 10``."""

    def drift(st, u):
        return np.broadcast_to(-rate * st.endpoint, _full(st, u, (1,)))

    def vol(st, u):
        return np.full(_full(st, u, (1, 1)), float(sigma0))

    def cost(st, u):
        return np.broadcast_to(np.minimum(st.endpoint[..., 0] ** 2, 10.0), _full(st, u, ()))

    return Coefficients(drift, vol, cost, L, 1, 1, name="ou", point_dependent=True,
                        params={"rate": rate, "sigma0": sigma0})


def geometric_brownian(mu=0.5, s=0.5, L=1.0):
    """``dX = mu X ds + s X dW`` in one dimension (multiplicative noise)."""

    def drift(st, u):
        return np.broadcast_to(mu * st.endpoint, _full(st, u, (1,)))

    def vol(st, u):
        return np.broadcast_to((s * st.endpoint)[..., None], _full(st, u, (1, 1)))

    def cost(st, u):
        return np.zeros(_full(st, u, ()))

    return Coefficients(drift, vol, cost, L, 1, 1, name="gbm", point_dependent=True,
                        params={"mu": mu, "s": s})


# -- configuration and trajectories ---------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    paths: int = 1000
    seed: int = 0
    d: int = 1
    n: int = 1
    workers: int = 1
    chunk: int = 4096

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if self.dt > self.horizon * (1 + 1e-12):
            raise ValueError("dt must not exceed the horizon")
        if self.paths < 1 or self.chunk < 1 or self.workers < 1:
            raise ValueError("paths, chunk and workers must be >= 1")

    @property
    def steps(self):
        return max(1, int(round(self.horizon / self.dt)))

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class Trajectory:
    """Euler trajectories on the grid ``t0 + k dt``, ``k = 0..K``.

    ``states`` is ``(N, K+1, d)``; ``dW`` ``(N, K, n)``; ``controls`` ``(N, K)``;
    ``drift`` ``(N, K, d)`` and ``vol`` ``(N, K, d, n)`` hold the coefficients
    used on each step, so ``states`` can be replayed exactly.
    """

    t0: float
    dt: float
    xi: HistoryPath
    states: np.ndarray
    dW: np.ndarray
    controls: np.ndarray
    drift: np.ndarray
    vol: np.ndarray
    path_ids: np.ndarray

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[1])

    def replay(self):
        """Rebuild the states from the stored coefficients and increments."""
        out = np.empty_like(self.states)
        out[:, 0] = self.states[:, 0]
        for k in range(self.dW.shape[1]):
            out[:, k + 1] = out[:, k] + euler_increment(self.drift[:, k], self.vol[:, k], self.dW[:, k], self.dt)
        return out

    def to_csv_rows(self, path=0):
        rows = []
        for k, t in enumerate(self.times):
            u = self.controls[path, k] if k < self.controls.shape[1] else self.controls[path, -1]
            rows.append([k, t] + list(self.states[path, k]) + [u])
        return rows


def _as_control(control):
    if control is None:
        return lambda t, st: np.zeros(st.batch_shape)
    if callable(control):
        return control
    c = float(control)
    return lambda t, st: np.full(st.batch_shape, c)


def propagate(coeffs, state, control, t0, dt, dW, on_step=None, check=True):
    """Run Euler steps for every row of ``dW`` (shape ``(K,) + noise_shape + (n,)``).

    ``state`` has batch shape ending in ``noise_shape`` (extra leading axes
    share the same noise).  ``control(t, state)`` returns controls with the
    state's batch shape.  ``on_step(k, t, state, u, b, s)`` is called before
    each update.  Returns the final state.
    """
    control = _as_control(control)
    weights = _step_weights(tuple(state.memory), dt)
    for k in range(dW.shape[0]):
        t = t0 + k * dt
        u = np.broadcast_to(control(t, state), state.batch_shape)
        b = coeffs.drift(state, u)
        s = coeffs.vol(state, u)
        if on_step is not None:
            on_step(k, t, state, u, b, s)
        x_new = state.endpoint + euler_increment(b, s, dW[k], dt)
        if check and not np.all(np.isfinite(x_new)):
            raise SimulationError(f"non-finite state at step {k} (t={t:.6g})")
        state = state.advance(x_new, dt, weights)
    return state


def map_chunks(fn, n_paths, chunk, workers=1):
    """Apply ``fn(path_ids)`` to consecutive id blocks; results in block order.

    The block layout depends only on ``chunk``, so the output is identical for
    any number of workers.
    """
    blocks = [np.arange(i, min(i + chunk, n_paths)) for i in range(0, n_paths, chunk)]
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, blocks))


def euler_simulate(coeffs, xi, control, cfg, t0=0.0, dW=None, path_ids=None, tag=MAIN):
    """Simulate ``cfg.paths`` Euler paths from ``(t0, xi)`` over ``cfg.horizon``."""
    if xi.d != coeffs.d:
        raise ValueError("initial path dimension does not match the coefficients")
    K = cfg.steps
    ids = np.arange(cfg.paths) if path_ids is None else np.asarray(path_ids)
    N = len(ids)
    if dW is None:
        dW = brownian_increments(cfg.seed, ids, K, coeffs.n, cfg.dt, tag)
    else:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (K, N, coeffs.n):
            raise ValueError(f"increment record must have shape {(K, N, coeffs.n)}")
    st0 = HistoryState.from_path(xi, coeffs.memory_rates).broadcast_to((N,))
    states = np.empty((N, K + 1, coeffs.d))
    controls = np.empty((N, K))
    drift = np.empty((N, K, coeffs.d))
    vol = np.empty((N, K, coeffs.d, coeffs.n))

    def rec(k, t, st, u, b, s):
        states[:, k] = st.endpoint
        controls[:, k] = u
        drift[:, k] = b
        vol[:, k] = s

    last = propagate(coeffs, st0, control, t0, cfg.dt, dW, on_step=rec)
    states[:, K] = last.endpoint
    return Trajectory(t0, cfg.dt, xi, states, np.transpose(dW, (1, 0, 2)).copy(), controls, drift, vol, ids)


def sample_states(coeffs, xi, control, cfg, times, t0=0.0, tag=MAIN, reducer=None):
    """Endpoint, running sup and deviation sup at ``times``, streamed in chunks.

    Returns a dict of arrays shaped ``(N, len(times))``: ``x`` (endpoint
    norm ... first coordinate kept in ``x0``), ``sup`` (``|X_s|_C``) and
    ``dev`` (``|X_s - xi_{s-t}|_C``).  Only the sampled columns are kept, so
    memory is independent of the number of steps.
    """
    times = np.asarray(times, dtype=float)
    K = cfg.steps
    idx = np.rint((times - t0) / cfg.dt).astype(int)
    if np.any(idx < 0) or np.any(idx > K):
        raise ValueError("sampling times outside the simulated range")
    at = {}
    for j, k in enumerate(idx):
        at.setdefault(int(k), []).append(j)
    xi0 = xi.endpoint

    def run(ids):
        dW = brownian_increments(cfg.seed, ids, K, coeffs.n, cfg.dt, tag)
        st = HistoryState.from_path(xi, coeffs.memory_rates).broadcast_to((len(ids),))
        out = {key: np.empty((len(ids), len(times))) for key in ("x0", "sup", "dev")}
        dev = np.zeros(len(ids))

        def put(k, state):
            for j in at.get(k, ()):
                out["x0"][:, j] = state.endpoint[:, 0]
                out["sup"][:, j] = state.sup
                out["dev"][:, j] = dev

        put(0, st)
        weights = _step_weights(tuple(st.memory), cfg.dt)
        ctrl = _as_control(control)
        for k in range(K):
            t = t0 + k * cfg.dt
            u = np.broadcast_to(ctrl(t, st), st.batch_shape)
            x_new = st.endpoint + euler_increment(coeffs.drift(st, u), coeffs.vol(st, u), dW[k], cfg.dt)
            if not np.all(np.isfinite(x_new)):
                raise SimulationError(f"non-finite state at step {k} (t={t:.6g})")
            st = st.advance(x_new, cfg.dt, weights)
            np.maximum(dev, np.linalg.norm(x_new - xi0, axis=-1), out=dev)
            put(k + 1, st)
        return out

    parts = map_chunks(run, cfg.paths, cfg.chunk, cfg.workers)
    return {key: np.concatenate([p[key] for p in parts]) for key in ("x0", "sup", "dev")}


# -- Lipschitz / growth probe ---------------------------------------------------


@dataclass
class LipschitzReport:
    growth: dict
    lipschitz: dict
    declared: float
    violation: bool
    worst: tuple

    @property
    def observed(self):
        return max(max(self.growth.values()), max(self.lipschitz.values()))


def lipschitz_probe(coeffs, num_pairs, seed, controls=(0.0,), scale=2.0, n_nodes=32):
    """Largest observed ratios in the growth and Lipschitz conditions.

    Growth: ``|b|, |sigma|_2, |q|`` over ``sqrt(1 + |x|_C^2)``.  Lipschitz:
    ``|b(x)-b(y)|`` (and likewise) over ``|x - y|_C``.  Paths are random
    piecewise-linear on ``n_nodes`` nodes with values uniform in
    ``[-scale, scale]``; half of them are rescaled by a random factor up to 10
    so that large paths are covered.  A violation is any ratio above
    ``L (1 + 1e-9)``.
    """
    rng = probe_generator(seed, PAIRS)
    xs = random_paths(rng, num_pairs, coeffs.d, n_nodes, scale=scale)
    ys = random_paths(rng, num_pairs, coeffs.d, n_nodes, scale=scale)
    amp = np.where(rng.uniform(size=num_pairs) < 0.5, rng.uniform(1.0, 10.0, size=num_pairs), 1.0)
    xs = [a * x for a, x in zip(amp, xs)]
    ys = [x + (y - x) * float(rng.uniform(0.0, 1.0)) for x, y in zip(xs, ys)]
    sx = HistoryState.from_paths(xs, coeffs.memory_rates)
    sy = HistoryState.from_paths(ys, coeffs.memory_rates)
    nx = np.array([x.sup_norm() for x in xs])
    dxy = np.array([(x - y).sup_norm() for x, y in zip(xs, ys)])
    growth = {"b": 0.0, "sigma": 0.0, "q": 0.0}
    lip = {"b": 0.0, "sigma": 0.0, "q": 0.0}
    worst = (0.0, None, None)
    for u in controls:
        ub = np.full(num_pairs, float(u))
        bx, by = coeffs.drift(sx, ub), coeffs.drift(sy, ub)
        vx, vy = coeffs.vol(sx, ub), coeffs.vol(sy, ub)
        qx, qy = coeffs.cost(sx, ub), coeffs.cost(sy, ub)
        den = np.sqrt(1.0 + nx**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = {
                ("growth", "b"): np.linalg.norm(bx, axis=-1) / den,
                ("growth", "sigma"): np.linalg.norm(vx, ord=2, axis=(-2, -1)) / den,
                ("growth", "q"): np.abs(qx) / den,
                ("lipschitz", "b"): np.where(dxy > 0, np.linalg.norm(bx - by, axis=-1) / dxy, 0.0),
                ("lipschitz", "sigma"): np.where(dxy > 0, np.linalg.norm(vx - vy, ord=2, axis=(-2, -1)) / dxy, 0.0),
                ("lipschitz", "q"): np.where(dxy > 0, np.abs(qx - qy) / dxy, 0.0),
            }
        for (kind, name), r in ratios.items():
            r = np.nan_to_num(r, nan=np.inf)
            i = int(np.argmax(r))
            target = growth if kind == "growth" else lip
            target[name] = max(target[name], float(r[i]))
            if r[i] > worst[0]:
                worst = (float(r[i]), f"{kind}:{name}", float(nx[i]))
    limit = coeffs.L * (1 + 1e-9)
    violation = any(v > limit for v in growth.values()) or any(v > limit for v in lip.values())
    return LipschitzReport(growth, lip, coeffs.L, violation, worst)


# -- moment estimates -----------------------------------------------------------


@dataclass
class MomentReport:
    times: np.ndarray
    sup_sq: np.ndarray
    sup_sq_se: np.ndarray
    dev_sq: np.ndarray
    dev_sq_se: np.ndarray
    c_hat: float
    c0_hat: float
    sup_term: float
    integral_term: float
    small_time_slopes: np.ndarray
    beta: float

    def rows(self):
        return [
            [repr(float(t)), repr(float(a)), repr(float(b)), repr(float(c)), repr(float(d))]
            for t, a, b, c, d in zip(self.times, self.sup_sq, self.sup_sq_se, self.dev_sq, self.dev_sq_se)
        ]


def moment_estimates(coeffs, xi, control, beta, cfg, obs_spacing=0.1, t0=0.0):
    """Monte Carlo versions of the weighted moment and increment estimates.

    On observation times ``t0 + j * obs_spacing`` (common to every ``dt``):

    * ``C_hat = [sup_s e^{2 beta s} E|X_s|_C^2 + int e^{2 beta l} E|X_l|_C^2 dl] / (1 + |xi|_C^2)``
    * ``C0_hat = max_s E|X_s - xi_{s-t}|_C^2 / ((1 + |xi|_C^2) e^{-2 beta s} ((s-t)+1)(s-t))``

    The integral uses the trapezoid rule on the observation grid.
    """
    if not beta < -theta(coeffs.L):
        raise ValueError(f"beta={beta} must be below -theta(L) = {-theta(coeffs.L)}")
    n_obs = int(math.floor(cfg.horizon / obs_spacing + 1e-9))
    if n_obs < 1:
        raise ValueError("horizon shorter than one observation interval")
    times = t0 + obs_spacing * np.arange(0, n_obs + 1)
    out = sample_states(coeffs, xi, control, cfg, times, t0=t0)
    n = cfg.paths
    sup2 = out["sup"] ** 2
    dev2 = out["dev"] ** 2
    m_sup, se_sup = sup2.mean(0), sup2.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(times))
    m_dev, se_dev = dev2.mean(0), dev2.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(times))
    xnorm2 = xi.sup_norm() ** 2
    w = np.exp(2 * beta * times)
    sup_term = float(np.max((w * m_sup)[1:]))
    integral = float(np.trapezoid(w * m_sup, times))
    c_hat = (sup_term + integral) / (1 + xnorm2)
    lag = times[1:] - t0
    shape = (1 + xnorm2) * np.exp(-2 * beta * times[1:]) * (lag + 1) * lag
    c0 = float(np.max(m_dev[1:] / shape))
    slopes = m_dev[1:] / lag
    return MomentReport(times, m_sup, se_sup, m_dev, se_dev, c_hat, c0, sup_term, integral, slopes, beta)


def coupling_constant(coeffs, xi, xi2, control, cfg, p=2):
    """``E sup_s |X^xi(s) - X^xi2(s)|^p / |xi - xi2|_C^p`` under common noise."""
    gap = (xi - xi2).sup_norm()
    if gap == 0:
        return 0.0
    K = cfg.steps

    def run(ids):
        dW = brownian_increments(cfg.seed, ids, K, coeffs.n, cfg.dt)
        a = HistoryState.from_path(xi, coeffs.memory_rates).broadcast_to((len(ids),))
        b = HistoryState.from_path(xi2, coeffs.memory_rates).broadcast_to((len(ids),))
        best = np.full(len(ids), (xi - xi2).sup_norm())
        ctrl = _as_control(control)
        wts = _step_weights(tuple(a.memory), cfg.dt)
        for k in range(K):
            t = k * cfg.dt
            nxt = []
            for st in (a, b):
                u = np.broadcast_to(ctrl(t, st), st.batch_shape)
                x = st.endpoint + euler_increment(coeffs.drift(st, u), coeffs.vol(st, u), dW[k], cfg.dt)
                nxt.append(st.advance(x, cfg.dt, wts))
            a, b = nxt
            np.maximum(best, np.linalg.norm(a.endpoint - b.endpoint, axis=-1), out=best)
        return best**p

    vals = np.concatenate(map_chunks(run, cfg.paths, cfg.chunk, cfg.workers))
    return float(vals.mean() / gap**p)
