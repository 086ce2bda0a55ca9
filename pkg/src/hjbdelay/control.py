"""Discounted cost, value estimates over control families, and regularity checks.

Controls are drawn from a :class:`ControlFamily`: open-loop piecewise-constant
sequences over a switching grid and/or quantized linear feedback
``u = nearest action to -k x(0)``.  Every candidate is simulated on the same
Brownian increments, so differences between candidates (and between initial
paths) carry little Monte Carlo noise.  Value estimates are minima over the
family and hence upper bounds on the value up to sampling error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import HistoryPath, random_paths, shift
from .rng import INNER, MAIN, brownian_increments, probe_generator
from .sde import (
    Coefficients,
    HistoryState,
    SimConfig,
    _step_weights,
    euler_increment,
    lambda_uniqueness,
    map_chunks,
    moment_estimates,
    theta,
)

__all__ = [
    "ControlFamily",
    "ControlProblem",
    "ValueEstimate",
    "riccati_coefficient",
    "lq_value",
    "no_delay_lq",
    "exp_memory_linear",
    "constant_cost_problem",
    "FIXTURES",
    "make_fixture",
    "analytic_tail",
    "generic_tail",
    "choose_horizon",
    "family_costs",
    "cost_J",
    "value_V",
    "value_many",
    "DppReport",
    "dpp_residual",
    "lipschitz_check_V",
    "shift_modulus_check",
    "canonical_path",
]

TIME_TOL = 1e-9


# -- control families -------------------------------------------------------------


class ControlFamily:
    """A finite family of admissible controls, evaluated in one batch.

    Parameters
    ----------
    actions : sequence of float
        The finite action set.
    switch_times : sequence of float
        Start of each constant piece of the open-loop sequences (first must be
        0).  ``None`` disables open-loop candidates.
    gains : sequence of float
        Feedback gains ``k``; the feedback is the action closest to ``-k x(0)``.
    """

    def __init__(self, actions, switch_times=(0.0,), gains=()):
        self.actions = np.asarray(sorted(float(a) for a in actions))
        if self.actions.size == 0:
            raise ValueError("empty action set")
        if switch_times is not None:
            st = np.asarray(switch_times, dtype=float)
            if st.ndim != 1 or st.size == 0 or st[0] != 0.0 or np.any(np.diff(st) <= 0):
                raise ValueError("switch times must start at 0 and increase")
            self.switch_times = st
            self.sequences = np.array(list(itertools.product(self.actions, repeat=len(st))))
        else:
            self.switch_times = np.zeros(1)
            self.sequences = np.zeros((0, 1))
        self.gains = np.asarray(gains, dtype=float)
        self._setup_quantizer()

    def _setup_quantizer(self):
        a = self.actions
        self._mid = 0.5 * (a[1:] + a[:-1])
        step = np.diff(a)
        # uniform grids quantize by rounding, which is much cheaper than a search
        self._uniform = len(a) > 1 and np.allclose(step, step[0], rtol=1e-12, atol=0)

    @property
    def n_open(self):
        return len(self.sequences)

    def __len__(self):
        return self.n_open + len(self.gains)

    def labels(self):
        out = ["open:" + "/".join(f"{v:g}" for v in seq) for seq in self.sequences]
        out += [f"feedback:k={g:g}" for g in self.gains]
        return out

    def quantize(self, target):
        a = self.actions
        if len(a) == 1:
            return np.full(np.shape(target), a[0])
        if self._uniform:
            h = a[1] - a[0]
            idx = np.rint((target - a[0]) / h)
            np.clip(idx, 0, len(a) - 1, out=idx)
            return a[0] + idx * h
        return a[np.searchsorted(self._mid, target, side="left")]

    def piece_index(self, t):
        return int(np.searchsorted(self.switch_times, t + TIME_TOL, side="right")) - 1

    def __call__(self, t, state):
        shape = state.batch_shape
        if shape[0] != len(self):
            raise ValueError(f"state batch leads with {shape[0]}, family has {len(self)} members")
        out = np.empty(shape)
        no = self.n_open
        if no:
            j = self.piece_index(t) if len(self.switch_times) > 1 else 0
            vals = self.sequences[:, j]
            out[:no] = vals.reshape((no,) + (1,) * (len(shape) - 1))
        if len(self.gains):
            g = self.gains.reshape((-1,) + (1,) * (len(shape) - 1))
            out[no:] = self.quantize(-g * state.endpoint[no:, ..., 0])
        return out

    def subset(self, open_idx=(), gain_idx=()):
        fam = ControlFamily.__new__(ControlFamily)
        fam.actions = self.actions
        fam.switch_times = self.switch_times
        fam.sequences = self.sequences[list(open_idx)].reshape(-1, self.sequences.shape[1])
        fam.gains = self.gains[list(gain_idx)]
        fam._setup_quantizer()
        return fam

    def __repr__(self):
        return f"ControlFamily(actions={self.actions.tolist()}, switches={self.switch_times.tolist()}, gains={self.gains.tolist()})"


# -- problems ---------------------------------------------------------------------


@dataclass(frozen=True)
class ControlProblem:
    """Coefficients, discount and the control family.

    ``tail`` describes how the truncation error is bounded: ``"analytic"``
    uses :func:`analytic_tail` with ``kappa`` (memory feedback strength) and
    ``sigma0``; ``"generic"`` uses :func:`generic_tail` with a fitted moment
    constant.
    """

    coeffs: Coefficients
    lam: float
    family: ControlFamily
    name: str = "problem"
    tail: str = "generic"
    kappa: float = 0.0
    sigma0: float = 1.0
    c_hat: float = None
    exact_value: object = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def actions(self):
        return self.family.actions

    @property
    def u_max(self):
        return float(np.max(np.abs(self.family.actions)))

    def validate(self, strict=None):
        """Threshold report; raises only for problems that claim the growth
        conditions but violate ``lambda > theta(L)``."""
        L = self.coeffs.L
        rep = {
            "lambda": self.lam,
            "theta": theta(L),
            "lambda_uniqueness": lambda_uniqueness(L),
            "lambda_gt_theta": self.lam > theta(L),
            "lambda_ge_uniqueness": self.lam >= lambda_uniqueness(L),
            "growth_conditions_claimed": self.coeffs.growth_ok,
        }
        strict = self.coeffs.growth_ok if strict is None else strict
        if strict and not rep["lambda_gt_theta"]:
            raise ValueError(f"lambda={self.lam} must exceed theta(L)={theta(L)}")
        return rep

    def with_(self, **kw):
        return replace(self, **kw)


def riccati_coefficient(lam):
    """Positive root of ``a^2 + lam a - 1 = 0``."""
    return 0.5 * (-lam + math.sqrt(lam * lam + 4.0))


def lq_value(z, lam, sigma0):
    """``a z^2 + sigma0^2 a / lam`` for the point-dependent LQ problem."""
    a = riccati_coefficient(lam)
    z = np.asarray(z, dtype=float)
    return a * z * z + sigma0 * sigma0 * a / lam


def _bcast(st, u, tail):
    return np.broadcast_shapes(st.batch_shape, np.shape(u)) + tail


def _lq_coeffs(sigma0, kappa, rate, eps_b=0.0, eps_q=0.0, L=1.0):
    rates = (rate,) if kappa else ()

    def drift(st, u):
        b = np.asarray(u, dtype=float)[..., None] + eps_b
        if kappa:
            b = b + kappa * st.memory[rate]
        return np.broadcast_to(b, _bcast(st, u, (1,)))

    def vol(st, u):
        return np.full(_bcast(st, u, (1, 1)), float(sigma0))

    def cost(st, u):
        x0 = st.endpoint[..., 0]
        return x0 * x0 + np.asarray(u, dtype=float) ** 2 + eps_q

    return Coefficients(
        drift, vol, cost, L, 1, 1, memory_rates=rates,
        name="exp_memory_linear" if kappa else "no_delay_lq",
        growth_ok=False, point_dependent=not kappa,
        params={"sigma0": sigma0, "kappa": kappa, "rate": rate, "eps_b": eps_b, "eps_q": eps_q},
    )


def no_delay_lq(lam=3.0, sigma0=1.0, actions=None, gains=None, switch_times=None, eps_b=0.0, eps_q=0.0):
    """``b = u``, ``sigma = sigma0``, ``q = x(0)^2 + u^2``; value ``lq_value``."""
    actions = np.linspace(-1.0, 1.0, 9) if actions is None else actions
    a = riccati_coefficient(lam)
    gains = np.round(a + 0.05 * np.arange(-3, 4), 6) if gains is None else gains
    fam = ControlFamily(actions, switch_times, gains)
    coeffs = _lq_coeffs(sigma0, 0.0, 1.0, eps_b, eps_q)
    exact = (lambda z: lq_value(z, lam, sigma0)) if eps_b == 0 and eps_q == 0 else None
    return ControlProblem(coeffs, lam, fam, "no_delay_lq", "analytic", 0.0, sigma0, exact_value=exact)


def exp_memory_linear(lam=3.0, sigma0=1.0, kappa=0.5, actions=(-1.0, 0.0, 1.0), switch_times=(0.0,), gains=(),
                      eps_b=0.0, eps_q=0.0):
    """``b = u + kappa int e^theta x(theta) d theta``, ``sigma = sigma0``, ``q = x(0)^2 + u^2``."""
    fam = ControlFamily(actions, switch_times, gains)
    coeffs = _lq_coeffs(sigma0, kappa, 1.0, eps_b, eps_q)
    return ControlProblem(coeffs, lam, fam, "exp_memory_linear", "analytic", kappa, sigma0)


def constant_cost_problem(c=1.0, lam=3.0, dynamics=None):
    """Running cost ``q = c`` on arbitrary dynamics (default Brownian)."""
    from .sde import brownian

    base = dynamics or brownian()

    def cost(st, u):
        return np.full(_bcast(st, u, ()), float(c))

    coeffs = base.with_(cost_fn=cost, name=f"const_cost_{c:g}", growth_ok=True, L=max(1.0, abs(c)))
    return ControlProblem(coeffs, lam, ControlFamily([0.0]), "constant_cost", "exact_constant",
                          exact_value=lambda z: c / lam + 0 * np.asarray(z))


FIXTURES = {"no_delay_lq": no_delay_lq, "exp_memory_linear": exp_memory_linear}


def make_fixture(name, **kw):
    try:
        return FIXTURES[name](**kw)
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


def canonical_path(z, left_horizon=4.0, nodes=65):
    """``theta -> e^theta z`` on the history window (zero at the left end)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return HistoryPath.from_function(lambda th: math.exp(th) * z, np.linspace(-left_horizon, 0.0, nodes))


# -- tail bounds --------------------------------------------------------------------


def _exp_moments(c, T):
    """``int_T^inf e^{-c s} s^k ds`` for ``k = 0, 1, 2``."""
    e = math.exp(-c * T)
    m0 = e / c
    m1 = e * (T / c + 1 / c**2)
    m2 = e * (T * T / c + 2 * T / c**2 + 2 / c**3)
    return m0, m1, m2


def analytic_tail(problem, xnorm, T):
    """Bound on ``E int_T^inf e^{-lam s} q ds`` for the linear fixtures.

    With ``|u| <= u_max``, Gronwall on the running sup and Doob's inequality
    give ``E|X_s|_C^2 <= 3 e^{2|kappa| s} (|x|_C^2 + u_max^2 s^2 + 4 sigma0^2 s)``,
    hence ``E q <= that + u_max^2``.  Needs ``lam > 2|kappa|``.
    """
    k = abs(problem.kappa)
    c = problem.lam - 2 * k
    if c <= 0:
        raise ValueError("analytic tail needs lambda > 2|kappa|")
    um, s0 = problem.u_max, problem.sigma0
    m0, m1, m2 = _exp_moments(c, T)
    n0, _, _ = _exp_moments(problem.lam, T)
    return 3.0 * (xnorm**2 * m0 + um * um * m2 + 4 * s0 * s0 * m1) + um * um * n0


def generic_tail(L, lam, c_hat, xnorm, T, beta=None):
    """``(L/lam) e^{-lam T} + L C^{1/2} (1+|x|_C) e^{-(lam+beta) T} / (lam+beta)``.

    ``beta`` defaults to ``-(theta(L) + lam) / 2``; the constant ``c_hat`` is a
    fitted moment constant, so the bound has the exact shape but an estimated
    constant.
    """
    th = theta(L)
    if not lam > th:
        raise ValueError("generic tail needs lambda > theta(L)")
    beta = -(th + lam) / 2 if beta is None else min(beta, -th)
    rate = lam + beta
    return (L / lam) * math.exp(-lam * T) + L * math.sqrt(c_hat) * (1 + xnorm) * math.exp(-rate * T) / rate


def tail_bound(problem, xnorm, T):
    if problem.tail == "analytic":
        return analytic_tail(problem, xnorm, T)
    if problem.tail == "exact_constant":
        return 0.0
    c_hat = problem.c_hat
    if c_hat is None:
        L = problem.coeffs.L
        beta = -(theta(L) + problem.lam) / 2
        cfg = SimConfig(dt=1e-2, horizon=2.0, paths=2000, seed=0)
        rep = moment_estimates(problem.coeffs, HistoryPath.zero(problem.coeffs.d, 4.0),
                               float(problem.actions[0]), beta, cfg)
        c_hat = rep.c_hat
    return generic_tail(problem.coeffs.L, problem.lam, c_hat, xnorm, T)


def choose_horizon(problem, xnorm, tol, max_horizon=50.0, step=0.5):
    """Smallest multiple of ``step`` whose tail bound is below ``tol``."""
    T = step
    while T <= max_horizon + 1e-12:
        if tail_bound(problem, xnorm, T) <= tol:
            return T
        T += step
    raise ValueError(f"tail tolerance {tol} unreachable within horizon {max_horizon}")


# -- cost evaluation ----------------------------------------------------------------


@dataclass
class ValueEstimate:
    value: float
    std_error: float
    tail_bound: float
    horizon_used: float
    paths_used: int
    argmin: str = ""
    candidates: np.ndarray = None
    candidate_se: np.ndarray = None

    def row(self):
        return [repr(self.value), repr(self.std_error), repr(self.tail_bound), repr(self.horizon_used), str(self.paths_used), self.argmin]


def _discounts(lam, dt, K):
    return np.exp(-lam * dt * np.arange(K)) * dt


def family_costs(problem, states, family, dt, K, dW, t0=0.0, want_state=False):
    """Left-point discounted costs over ``K`` steps for a batch of candidates.

    ``states`` has batch shape ``(C, ..., N)``; ``dW`` is ``(K, N, n)``.
    Returns costs shaped like the batch (and the final state if requested).
    """
    coeffs = problem.coeffs
    disc = _discounts(problem.lam, dt, K)
    acc = np.zeros(states.batch_shape)
    st = states
    weights = _step_weights(tuple(st.memory), dt)
    for k in range(K):
        t = t0 + k * dt
        u = family(t, st)
        acc += disc[k] * coeffs.cost(st, u)
        x_new = st.endpoint + euler_increment(coeffs.drift(st, u), coeffs.vol(st, u), dW[k], dt)
        st = st.advance(x_new, dt, weights)
    if not np.all(np.isfinite(acc)):
        raise FloatingPointError("non-finite running cost")
    return (acc, st) if want_state else acc


def _initial_states(problem, xs, C, n):
    base = HistoryState.from_paths(xs, problem.coeffs.memory_rates)  # (P,)
    P = len(xs)
    return base.take((None, slice(None), None)).broadcast_to((C, P, n))


def _estimates(costs, tails, horizon, family):
    """``costs`` is ``(C, P, N)``; returns a ValueEstimate per initial path."""
    N = costs.shape[-1]
    means = costs.mean(-1)
    se = costs.std(-1, ddof=1) / math.sqrt(N) if N > 1 else np.zeros_like(means)
    labels = family.labels()
    out = []
    for p in range(costs.shape[1]):
        i = int(np.argmin(means[:, p]))
        out.append(ValueEstimate(float(means[i, p]), float(se[i, p]), float(tails[p]), horizon, N, labels[i],
                                 means[:, p].copy(), se[:, p].copy()))
    return out


def value_many(xs, problem, cfg, family=None, tag=MAIN, return_costs=False):
    """Value estimates for several initial paths under common random numbers."""
    family = problem.family if family is None else family
    C = len(family)
    K = cfg.steps

    def run(ids):
        dW = brownian_increments(cfg.seed, ids, K, problem.coeffs.n, cfg.dt, tag)
        st = _initial_states(problem, xs, C, len(ids))
        return family_costs(problem, st, family, cfg.dt, K, dW)

    costs = np.concatenate(map_chunks(run, cfg.paths, cfg.chunk, cfg.workers), axis=-1)
    tails = [tail_bound(problem, x.sup_norm(), K * cfg.dt) for x in xs]
    est = _estimates(costs, tails, K * cfg.dt, family)
    return (est, costs) if return_costs else est


def value_V(x, problem, cfg, family=None):
    """Minimum of the estimated cost over the control family."""
    return value_many([x], problem, cfg, family)[0]


def cost_J(x, control, problem, cfg):
    """Estimated cost of a single control (a constant, or a one-member family)."""
    if not isinstance(control, ControlFamily):
        control = ControlFamily([float(control)])
    if len(control) != 1:
        raise ValueError("cost_J takes exactly one control")
    return value_V(x, problem, cfg, control)


# -- dynamic programming residual ------------------------------------------------


@dataclass
class DppReport:
    residual: float
    std_error: float
    budget: float
    lhs: float
    rhs: float
    info_gap: float
    tail: float
    argmin: str

    @property
    def within_budget(self):
        return abs(self.residual) <= self.budget

    def row(self):
        return [repr(v) for v in (self.residual, self.std_error, self.budget, self.lhs, self.rhs, self.info_gap, self.tail)] + [self.argmin]


def dpp_residual(x, t, problem, cfg, outer_family, inner_family=None, inner_value=None, lhs_value=None,
                 inner_paths=100, inner_horizon=None):
    """``V(x) - min_u E[int_0^t e^{-lam l} q dl + e^{-lam t} V(X_t)]`` on the grid.

    The inner value is either ``inner_value(state) -> array`` (an exact value
    on the batched history state) or a nested estimate: for every outer path
    and outer candidate, ``inner_paths`` fresh paths re-rooted at the
    simulated ``X_t`` are run under every member of ``inner_family`` and the
    smallest mean is kept.  The left side is ``lhs_value`` if given, else
    :func:`value_V` with the problem's own family.

    The budget is three combined standard errors, plus the tail bounds, plus
    ``e^{-lam t} E[J_{c*} - min_c J_c]`` over the inner candidates' means,
    where ``c*`` is the inner candidate with the smallest average (the price
    of choosing the inner control per path rather than once).
    """
    k_t = int(round(t / cfg.dt))
    if k_t < 1 or abs(k_t * cfg.dt - t) > 1e-9:
        raise ValueError("t must be a positive multiple of dt")
    if inner_value is None and inner_family is None:
        raise ValueError("need an inner value or an inner family")
    C = len(outer_family)
    disc_t = math.exp(-problem.lam * t)
    H_in = cfg.horizon - t if inner_horizon is None else inner_horizon
    K_in = max(1, int(round(H_in / cfg.dt)))
    M = inner_paths

    def run(ids):
        dW = brownian_increments(cfg.seed, ids, k_t, problem.coeffs.n, cfg.dt, MAIN)
        st = _initial_states(problem, [x], C, len(ids))
        run_cost, st_t = family_costs(problem, st, outer_family, cfg.dt, k_t, dW, want_state=True)
        run_cost = run_cost[:, 0]
        st_t = st_t.take((slice(None), 0))  # (C, n)
        if inner_value is not None:
            v = np.asarray(inner_value(st_t), dtype=float)
            return run_cost + disc_t * v, v[None], np.zeros(C)
        Ci = len(inner_family)
        inner_ids = (ids[:, None] * M + np.arange(M)[None, :]).reshape(-1)
        dWi = brownian_increments(cfg.seed, inner_ids, K_in, problem.coeffs.n, cfg.dt, INNER)
        dWi = dWi.reshape(K_in, len(ids), M, problem.coeffs.n)
        sti = st_t.take((None, slice(None), slice(None), None)).broadcast_to((Ci, C, len(ids), M))
        ci = family_costs(problem, sti, inner_family, cfg.dt, K_in, dWi)  # (Ci, C, n, M)
        means = ci.mean(-1)
        return run_cost + disc_t * means.min(0), means, st_t.sup.max(-1)

    parts = map_chunks(run, cfg.paths, cfg.chunk, cfg.workers)
    vals = np.concatenate([p[0] for p in parts], axis=-1)  # (C, N)
    inner = np.concatenate([p[1] for p in parts], axis=-1)  # (Ci, C, N)
    N = vals.shape[-1]
    means = vals.mean(-1)
    ses = vals.std(-1, ddof=1) / math.sqrt(N)
    i = int(np.argmin(means))
    rhs, se_r = float(means[i]), float(ses[i])
    # min_c E[J_c] - E[min_c J_c] <= E[J_{c*} - min_c J_c] with c* best on average
    best = int(np.argmin(inner[:, i].mean(-1)))
    info_gap = disc_t * float((inner[best, i] - inner[:, i].min(0)).mean())

    if lhs_value is not None:
        lhs, se_l, tail_l = float(lhs_value), 0.0, 0.0
    else:
        est = value_V(x, problem, cfg)
        lhs, se_l, tail_l = est.value, est.std_error, est.tail_bound
    tail_in = 0.0
    if inner_value is None:
        sup_max = float(np.max(np.concatenate([p[2] for p in parts])))
        tail_in = disc_t * tail_bound(problem, sup_max, K_in * cfg.dt)
    se = math.sqrt(se_l**2 + se_r**2)
    tail = tail_l + tail_in
    budget = 3 * se + tail + info_gap
    return DppReport(lhs - rhs, se, budget, lhs, rhs, info_gap, tail, outer_family.labels()[i])


# -- regularity of the value --------------------------------------------------------


@dataclass
class RatioReport:
    """Largest observed ratio at each refinement level."""

    levels: list
    ratios: list
    details: list = field(default_factory=list)

    @property
    def spread(self):
        r = np.asarray(self.ratios, dtype=float)
        if np.all(r == 0):
            return 1.0
        if np.any(r == 0):
            return math.inf
        return float(r.max() / r.min())

    def stable(self, factor=2.0):
        return self.spread <= factor


def lipschitz_check_V(problem, cfg, num_pairs, levels=None, scale=1.0, seed=None):
    """``max |V(x) - V(y)| / |x - y|_C`` over random pairs, per refinement level.

    ``levels`` is a list of ``SimConfig`` (default: ``cfg`` and ``cfg`` with
    half the step and twice the paths).  Pairs and noise are shared across
    levels.
    """
    seed = cfg.seed if seed is None else seed
    levels = levels or [cfg, cfg.with_(dt=cfg.dt / 2, paths=cfg.paths * 2)]
    rng = probe_generator(seed, 11)
    xs = random_paths(rng, num_pairs, problem.coeffs.d, 16, scale=scale)
    ys = random_paths(rng, num_pairs, problem.coeffs.d, 16, scale=scale)
    dist = np.array([(a - b).sup_norm() for a, b in zip(xs, ys)])
    ratios, details = [], []
    for lv in levels:
        est = value_many(xs + ys, problem, lv)
        v = np.array([e.value for e in est])
        r = np.abs(v[:num_pairs] - v[num_pairs:]) / np.where(dist > 0, dist, np.inf)
        ratios.append(float(r.max()))
        details.append(r)
    return RatioReport([(lv.dt, lv.paths) for lv in levels], ratios, details)


def shift_shape(xnorm, delta, lam):
    return (1 + xnorm) * (delta + math.sqrt(delta) + 1 - math.exp(-lam * delta))


def shift_modulus_check(problem, cfg, deltas, x=None):
    """Fitted ``|V(x) - V(x_delta)| / [(1+|x|_C)(delta + delta^{1/2} + 1 - e^{-lam delta})]``.

    All shifted paths share the noise of ``x``.  Returns a RatioReport whose
    levels are the deltas; ``delta = 0`` gives an exact zero.
    """
    x = canonical_path(1.0) if x is None else x
    paths = [x] + [shift(x, d) for d in deltas]
    est = value_many(paths, problem, cfg)
    v0 = est[0].value
    ratios, details = [], []
    for d, e in zip(deltas, est[1:]):
        lhs = abs(e.value - v0)
        shape = shift_shape(x.sup_norm(), d, problem.lam)
        ratios.append(0.0 if lhs == 0 else lhs / shape)
        details.append((d, lhs, shape))
    return RatioReport(list(deltas), ratios, details)
