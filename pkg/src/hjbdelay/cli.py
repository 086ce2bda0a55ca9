"""Batch experiment driver: ``hjbdelay <subcommand> [options]``.

Each subcommand writes ``<name>.csv`` (an echo of the effective settings as
``# key=value`` lines, then a CSV table) and ``<name>_summary.txt`` (a
timestamped header plus one PASS/FAIL line per asserted check) into the
output directory: ``--output``, else ``$HJBDELAY_OUTPUT_DIR``, else the
working directory.  Settings resolve as flags > ``--config`` file > defaults.

Exit status: 0 all checks pass, 1 a check failed, 2 invalid configuration,
3 runtime fault.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import io
import math
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import control as ctl
from . import gauge as gg
from . import sde
from .calculus import ito_residuals, power_functional
from .hjb import classical_residual, embedding_check, lq_functional, reduce_no_delay, ReductionError, stability_experiment
from .paths import HistoryPath, TimedPath, norm1_distance, random_paths
from .rng import probe_generator
from .variational import (
    SearchDomain,
    UpsilonBarGauge,
    borwein_preiss,
    random_lattice_domain,
    verify_result,
)

OUTPUT_ENV = "HJBDELAY_OUTPUT_DIR"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3

SIM_FIXTURES = ("ou", "brownian", "gbm", "zero", "no_delay_lq", "exp_memory_linear")
CONTROL_FIXTURES = tuple(sorted(ctl.FIXTURES))
# settings that cannot change any number in a report; kept out of the CSV echo
NON_SEMANTIC = ("workers", "output", "config")


class ConfigError(ValueError):
    pass


@dataclass
class Report:
    columns: list
    rows: list
    checks: list = field(default_factory=list)  # (name, passed, detail)

    def check(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))

    @property
    def passed(self):
        return all(c[1] for c in self.checks)


def floats(text):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(vals)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# -- shared helpers -------------------------------------------------------------


def _sim_cfg(c):
    return sde.SimConfig(dt=c["dt"], horizon=c["horizon"], paths=c["paths"], seed=c["seed"],
                         workers=c["workers"], chunk=c["chunk"])


def _coefficients(name):
    if name == "ou":
        return sde.ornstein_uhlenbeck()
    if name == "brownian":
        return sde.brownian()
    if name == "gbm":
        return sde.geometric_brownian()
    if name == "zero":
        return sde.zero_coefficients()
    return ctl.make_fixture(name).coeffs


def _problem(c, **kw):
    return ctl.make_fixture(c["fixture"], lam=c["lam"], sigma0=c["sigma"], **kw)


def _xi(c, z=None):
    return ctl.canonical_path(c["z"] if z is None else z, c["history"])


# -- subcommands -----------------------------------------------------------------


def cmd_gauge_verify(c):
    rep = Report(["m", "M", "check", "status", "worst_slack", "samples"], [])
    ms = (c["m"],) if c["m"] else (1, 2, 3)
    Ms = (c["M"],) if c["M"] else (3.0, 5.0)
    for m in ms:
        for j, M in enumerate(Ms):
            spec = gg.GaugeSpec(m, M)
            rng = probe_generator(c["seed"], 100 + 10 * m + j)
            for chk in gg.verify_inequalities(spec, c["samples"], rng, mixed_samples=c["mixed_samples"]):
                rep.rows.append([m, _fmt(M)] + chk.row())
                if not chk.skipped:
                    rep.check(f"{chk.name}[m={m},M={M:g}]", chk.passed, f"worst_slack={chk.worst_slack:.3e}")
    spec = gg.GaugeSpec(3, 3.0)
    ratio = gg.gauge_property_check(spec, c["pairs"], probe_generator(c["seed"], 150))
    rep.rows.append([3, "3.0", "gauge_property", "pass" if ratio <= 1 else "fail", repr(1.0 - ratio), c["pairs"]])
    rep.check("gauge_property[m=3,M=3]", ratio <= 1.0, f"max d_inf/bound={ratio:.4f}")
    worst_scaled, min_dist = 0.0, math.inf
    for n in range(1, c["n_max"] + 1):
        p, q = gg.counterexample_pair(n)
        worst_scaled = max(worst_scaled, n * gg.upsilon_bar(spec, p, q))
        min_dist = min(min_dist, norm1_distance(p, q))
    ok = worst_scaled <= 1.0 and min_dist >= 1.0
    rep.rows.append([3, "3.0", "counterexample", "pass" if ok else "fail", repr(1.0 - worst_scaled), c["n_max"]])
    rep.check("counterexample", ok, f"max n*Ybar={worst_scaled:.3e}, min distance={min_dist:g}")
    return rep


def cmd_deriv_check(c):
    ms = (c["m"],) if c["m"] else (1, 2, 3)
    rows, s = gg.derivative_check(c["probes"], c["seed"], ms=ms, d=c["d"], rtol=c["tol"], atol=c["atol"])
    rep = Report(["functional", "probe_id", "coordinate", "analytic", "fd", "abs_err", "rel_err"], [r.row() for r in rows])
    rep.check("comparisons", s["failed"] == 0, f"{s['passed']}/{s['probes']} probes pass, worst {s['worst_tol_ratio']:.2f} x tolerance, {s['kink_rejected']} kink draws rejected")
    rep.check("coverage", s["probes"] == c["probes"], f"{s['probes']} probes compared")
    return rep


def cmd_ito_check(c):
    rep = Report(["functional", "process", "dt", "mean", "std_error", "mean_abs"], [])
    funcs = (c["functional"],) if c["functional"] else ("square", "upsilon")
    procs = (c["process"],) if c["process"] else ("brownian", "ou")
    xi = _xi(c)
    for fname in funcs:
        if fname == "square":
            f = power_functional(1, [0.0])
        else:
            anchor = TimedPath(0.0, HistoryPath.zero(1, c["history"]))
            f = gg.AnchoredGauge(gg.GaugeSpec(1, 3.0), anchor, "upsilon").as_functional()
        for pname in procs:
            coeffs = _coefficients(pname)
            means = []
            for dt in (c["dt"], c["dt"] / 4):
                cfg = _sim_cfg(c).with_(dt=dt)
                r = ito_residuals(f, coeffs, xi, None, cfg)
                mean, se, mabs = float(r.mean()), float(r.std(ddof=1) / math.sqrt(len(r))), float(np.abs(r).mean())
                rep.rows.append([fname, pname, repr(dt), repr(mean), repr(se), repr(mabs)])
                rep.check(f"unbiased[{fname},{pname},dt={dt:g}]", abs(mean) <= 3 * se, f"mean={mean:.3e}, 3se={3 * se:.3e}")
                means.append(mabs)
            ratio = means[0] / means[1] if means[1] > 0 else math.inf
            rep.check(f"decay[{fname},{pname}]", ratio >= c["factor"], f"mean|res| ratio={ratio:.3f}")
    return rep


def _bp_functional(name):
    if name == "neg-endpoint-square":
        return lambda p: -float(np.dot(p.path.endpoint, p.path.endpoint)) - 0.1 * p.t
    if name == "neg-sup":
        return lambda p: -p.path.sup_norm() - 0.1 * p.t
    if name == "neg-time":
        return lambda p: -p.t
    raise ConfigError(f"unknown functional {name!r}")


def read_domain_csv(path):
    """Domain file: header ``point,t,theta,x1..xd``; rows grouped by point id."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    except OSError as e:
        raise ConfigError(f"cannot read domain file: {e}") from None
    if len(rows) < 2 or [h.strip() for h in rows[0][:3]] != ["point", "t", "theta"]:
        raise ConfigError("domain file needs a 'point,t,theta,x1..' header")
    groups = {}
    for r in rows[1:]:
        groups.setdefault(r[0].strip(), []).append([float(v) for v in r[1:]])
    pts = []
    for key, g in groups.items():
        a = np.array(g)
        if np.any(a[:, 0] != a[0, 0]):
            raise ConfigError(f"point {key}: time differs between rows")
        pts.append(TimedPath(float(a[0, 0]), HistoryPath._raw(a[:, 1], a[:, 2:])))
    return SearchDomain(pts)


def cmd_bp_search(c):
    f = _bp_functional(c["functional"])
    if c["domain"]:
        domain = read_domain_csv(c["domain"])
    else:
        domain = random_lattice_domain(probe_generator(c["seed"], 300), c["size"])
    rho = UpsilonBarGauge(gg.GaugeSpec(c["gauge_m"], c["gauge_M"]))
    fv = domain.evaluate(f)
    eps = c["epsilon"]
    if c["start"] is None:
        start = int(np.nonzero(fv >= fv.max() - eps)[0][0])
    else:
        start = c["start"]
        if not 0 <= start < len(domain):
            raise ConfigError("start index outside the domain")
    deltas = [c["delta0"] * 2.0**-i for i in range(200)]
    res = borwein_preiss(None, rho, deltas, eps, start, domain, fvals=fv)
    chk = verify_result(res, None, rho, eps, domain, fvals=fv)
    d = domain[0].path.d
    rep = Report(["center", "domain_index", "t"] + [f"x{i + 1}" for i in range(d)] + ["delta", "rho_to_max"], [])
    for k, (ci, dk) in enumerate(zip(res.center_indices, res.deltas)):
        p = domain[ci]
        rep.rows.append([k, ci, repr(p.t)] + [repr(float(v)) for v in p.path.endpoint]
                        + [repr(dk), repr(float(rho(domain[res.index], p)))])
    for key in ("i", "ii", "iii"):
        rep.check(f"property_{key}", chk[key])
    return rep


def cmd_simulate(c):
    coeffs = _coefficients(c["fixture"])
    cfg = _sim_cfg(c)
    if not 0 <= c["path_index"] < cfg.paths:
        raise ConfigError("path-index must be below paths")
    traj = sde.euler_simulate(coeffs, _xi(c), c["control"], cfg)
    rep = Report(["step", "time"] + [f"x{i + 1}" for i in range(coeffs.d)] + ["control"], [])
    for r in traj.to_csv_rows(c["path_index"]):
        rep.rows.append([r[0]] + [repr(float(v)) for v in r[1:]])
    rep.check("replay", np.array_equal(traj.replay(), traj.states), "states rebuilt from stored increments")
    return rep


def cmd_sde_estimates(c):
    coeffs = _coefficients(c["fixture"])
    cfg = _sim_cfg(c)
    xi = _xi(c)
    m = sde.moment_estimates(coeffs, xi, c["control"], c["beta"], cfg)
    cp = sde.coupling_constant(coeffs, xi, _xi(c, 1.5 * c["z"]), c["control"], cfg)
    rep = Report(["quantity", "time", "value", "std_error"], [])
    for t, a, b in zip(m.times, m.sup_sq, m.sup_sq_se):
        rep.rows.append(["E_sup_sq", repr(float(t)), repr(float(a)), repr(float(b))])
    for t, a, b in zip(m.times, m.dev_sq, m.dev_sq_se):
        rep.rows.append(["E_dev_sq", repr(float(t)), repr(float(a)), repr(float(b))])
    for name, v in (("C_hat", m.c_hat), ("C0_hat", m.c0_hat), ("sup_term", m.sup_term), ("C_p2", cp)):
        rep.rows.append([name, "", repr(float(v)), ""])
        rep.check(f"finite[{name}]", math.isfinite(v), f"{v:.6g}")
    return rep


def cmd_value_lq(c):
    prob = _problem(c)
    if prob.exact_value is None:
        raise ConfigError("value-lq needs a fixture with a closed-form value")
    cfg = _sim_cfg(c)
    est = ctl.value_V(_xi(c), prob, cfg)
    ref = float(prob.exact_value(c["z"]))
    diff = est.value - ref
    hi = max(3 * est.std_error, c["rel_tol"] * ref)
    lo = -3 * est.std_error - est.tail_bound
    rep = Report(["z", "riccati_a", "reference", "estimate", "std_error", "tail_bound", "difference", "argmin"],
                 [[repr(c["z"]), repr(ctl.riccati_coefficient(c["lam"])), repr(ref), repr(est.value),
                   repr(est.std_error), repr(est.tail_bound), repr(diff), est.argmin]])
    print(f"Riccati reference V({c['z']:g}) = {ref:.6f}; Monte Carlo {est.value:.6f} +- {est.std_error:.2e}")
    rep.check("oracle", lo <= diff <= hi, f"diff={diff:.3e} in [{lo:.3e}, {hi:.3e}]")
    return rep


def cmd_dpp_check(c):
    rep = Report(["t", "residual", "std_error", "budget", "lhs", "rhs", "info_gap", "tail", "argmin"], [])
    x = _xi(c)
    for t in c["t"]:
        if c["fixture"] == "no_delay_lq":
            prob = _problem(c)
            a = ctl.riccati_coefficient(c["lam"])
            fam = ctl.ControlFamily(np.round(np.arange(-2, 2.0001, c["spacing"]), 10), None, [a])
            exact = prob.exact_value
            r = ctl.dpp_residual(x, t, prob, _sim_cfg(c).with_(horizon=t), fam,
                                 inner_value=lambda st: exact(st.endpoint[..., 0]), lhs_value=exact(c["z"]))
            ok = abs(r.residual) <= 3 * r.std_error
            rep.check(f"dpp[t={t:g}]", ok, f"residual={r.residual:.3e}, 3se={3 * r.std_error:.3e}")
        else:
            prob = _problem(c, switch_times=(0.0, t))
            three = ctl.ControlFamily(prob.actions)
            r = ctl.dpp_residual(x, t, prob, _sim_cfg(c), three, inner_family=three, inner_paths=c["inner_paths"])
            rep.check(f"dpp[t={t:g}]", r.within_budget, f"residual={r.residual:.3e}, budget={r.budget:.3e}")
        rep.rows.append([repr(t)] + r.row())
    return rep


def cmd_lipschitz_v(c):
    prob = _problem(c)
    cfg = _sim_cfg(c)
    r = ctl.lipschitz_check_V(prob, cfg, c["pairs"])
    rep = Report(["dt", "paths", "max_ratio"], [[repr(lv[0]), lv[1], repr(v)] for lv, v in zip(r.levels, r.ratios)])
    rep.check("stable", r.stable(c["factor"]), f"spread={r.spread:.3f}")
    return rep


def cmd_shift_modulus(c):
    prob = _problem(c)
    r = ctl.shift_modulus_check(prob, _sim_cfg(c), c["deltas"], _xi(c))
    rep = Report(["delta", "value_gap", "shape", "ratio"],
                 [[repr(d), repr(lhs), repr(shape), repr(v)] for (d, lhs, shape), v in zip(r.details, r.ratios)])
    rep.check("stable", r.stable(c["factor"]), f"spread={r.spread:.3f}")
    return rep


def cmd_hjb_residual(c):
    prob = _problem(c)
    if prob.exact_value is None:
        raise ConfigError("hjb-residual needs a fixture with a closed-form value")
    v = lq_functional(c["lam"], c["sigma"])
    fine = np.round(np.arange(-2, 2.0001, c["spacing"]), 10)
    rng = probe_generator(c["seed"], 400)
    xs = random_paths(rng, c["probes"], 1, 16, c["history"])
    ts = rng.uniform(0.0, 1.0, size=c["probes"])
    rep = Report(["probe", "t", "x0", "residual", "control", "residual_action_set"], [])
    worst = 0.0
    for i, (x, t) in enumerate(zip(xs, ts)):
        r = classical_residual(v, x, float(t), prob, fine)
        coarse = classical_residual(v, x, float(t), prob)
        worst = max(worst, abs(r.residual))
        rep.rows.append([i, repr(float(t)), repr(float(x.endpoint[0])), repr(r.residual), repr(r.control),
                         repr(coarse.residual)])
    rep.check("residual", worst <= c["tol"], f"max |residual|={worst:.3e} with control spacing {c['spacing']:g}")
    return rep


def cmd_stability(c):
    def factory(**kw):
        return _problem(c, **kw)

    xs = [_xi(c, z) for z in (-1.0, 0.0, 1.0)]
    rows = stability_experiment(factory, list(c["eps"]), _sim_cfg(c), xs, c["which"])
    rep = Report(["eps", "coeff_distance", "value_distance", "predicted", "std_error", "bias"], [r.row() for r in rows])
    if c["which"] == "q":
        for r in rows:
            gap = abs(r.value_distance - r.predicted)
            rep.check(f"shift[eps={r.eps:g}]", gap <= 3 * r.std_error + r.bias, f"|dV - eps/lam|={gap:.3e}")
    else:
        order = sorted(rows, key=lambda r: -r.eps)
        dist = [r.value_distance for r in order]
        rep.check("monotone", all(a > b for a, b in zip(dist, dist[1:])), ", ".join(f"{v:.3e}" for v in dist))
    return rep


def cmd_reduce_check(c):
    prob = _problem(c)
    rep = Report(["fixture", "reduced", "max_change", "embedding_diff", "embedding_se"], [])
    try:
        red = reduce_no_delay(prob, c["probes"], c["seed"])
    except ReductionError as e:
        rep.rows.append([c["fixture"], "no", "", "", ""])
        rep.check("point_dependent", False, str(e))
        return rep
    diff, se = embedding_check(prob, c["z"], _sim_cfg(c))
    rep.rows.append([c["fixture"], "yes", repr(red.max_change), repr(diff), repr(se)])
    rep.check("point_dependent", True, f"max change {red.max_change:.1e}")
    rep.check("embedding", abs(diff) <= 3 * se, f"diff={diff:.3e}, se={se:.3e}")
    return rep


# -- argument handling ---------------------------------------------------------------

COMMON_DEFAULTS = {"seed": 0, "workers": 1, "chunk": 4096, "history": 4.0, "output": None, "config": None}

# name: (handler, help, defaults, extra options [(flag, kwargs)])
SUBCOMMANDS = {
    "gauge-verify": (cmd_gauge_verify, "gauge inequalities, gauge property and counterexample",
                     {"samples": 10000, "mixed_samples": 1000, "pairs": 2000, "n_max": 1000, "m": None, "M": None},
                     [("--samples", dict(type=int)), ("--mixed-samples", dict(type=int)), ("--pairs", dict(type=int)),
                      ("--n-max", dict(type=int)), ("--m", dict(type=int, choices=(1, 2, 3))), ("--M", dict(type=float))]),
    "deriv-check": (cmd_deriv_check, "analytic vs finite-difference derivatives of the gauges",
                    {"probes": 200, "d": 2, "m": None, "tol": 1e-5, "atol": 1e-7},
                    [("--probes", dict(type=int)), ("--d", dict(type=int)), ("--m", dict(type=int, choices=(1, 2, 3))),
                     ("--tol", dict(type=float)), ("--atol", dict(type=float))]),
    "ito-check": (cmd_ito_check, "functional Ito residuals along simulated paths",
                  {"dt": 1e-3, "horizon": 1.0, "paths": 10000, "z": 0.5, "functional": None, "process": None, "factor": 1.6},
                  [("--functional", dict(choices=("square", "upsilon"))), ("--process", dict(choices=("brownian", "ou"))),
                   ("--z", dict(type=float)), ("--factor", dict(type=float))]),
    "bp-search": (cmd_bp_search, "perturbed maximization on a finite domain",
                  {"domain": None, "size": 1000, "functional": "neg-endpoint-square", "epsilon": 0.5, "delta0": 1.0,
                   "start": None, "gauge_m": 3, "gauge_M": 3.0},
                  [("--domain", dict()), ("--size", dict(type=int)),
                   ("--functional", dict(choices=("neg-endpoint-square", "neg-sup", "neg-time"))),
                   ("--epsilon", dict(type=float)), ("--delta0", dict(type=float)), ("--start", dict(type=int)),
                   ("--gauge-m", dict(type=int, choices=(1, 2, 3))), ("--gauge-M", dict(type=float))]),
    "simulate": (cmd_simulate, "Euler trajectory dump",
                 {"fixture": "ou", "dt": 1e-3, "horizon": 1.0, "paths": 1, "z": 1.0, "control": 0.0, "path_index": 0},
                 [("--fixture", dict(choices=SIM_FIXTURES)), ("--z", dict(type=float)), ("--control", dict(type=float)),
                  ("--path-index", dict(type=int))]),
    "sde-estimates": (cmd_sde_estimates, "moment, increment and coupling constants",
                      {"fixture": "ou", "dt": 1e-2, "horizon": 2.0, "paths": 10000, "z": 1.0, "control": 0.0, "beta": -4.0},
                      [("--fixture", dict(choices=SIM_FIXTURES)), ("--z", dict(type=float)),
                       ("--control", dict(type=float)), ("--beta", dict(type=float))]),
    "value-lq": (cmd_value_lq, "Monte Carlo value against the Riccati solution",
                 {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "z": 1.0, "dt": 1e-3, "horizon": 4.0,
                  "paths": 20000, "rel_tol": 0.02},
                 [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                  ("--sigma", dict(type=float)), ("--z", dict(type=float)), ("--rel-tol", dict(type=float))]),
    "dpp-check": (cmd_dpp_check, "dynamic programming residual",
                  {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "z": 1.0, "t": (0.1, 0.5), "dt": 1e-3,
                   "horizon": 6.0, "paths": 20000, "spacing": 0.01, "inner_paths": 100},
                  [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                   ("--sigma", dict(type=float)), ("--z", dict(type=float)), ("--t", dict(type=floats)),
                   ("--spacing", dict(type=float)), ("--inner-paths", dict(type=int))]),
    "lipschitz-v": (cmd_lipschitz_v, "Lipschitz ratio of the value under refinement",
                    {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "pairs": 20, "dt": 1e-2, "horizon": 4.0,
                     "paths": 2000, "factor": 2.0},
                    [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                     ("--sigma", dict(type=float)), ("--pairs", dict(type=int)), ("--factor", dict(type=float))]),
    "shift-modulus": (cmd_shift_modulus, "value change under the frozen shift",
                      {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "z": 1.0, "deltas": (0.01, 0.1, 0.5),
                       "dt": 1e-2, "horizon": 4.0, "paths": 2000, "factor": 2.0},
                      [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                       ("--sigma", dict(type=float)), ("--z", dict(type=float)), ("--deltas", dict(type=floats)),
                       ("--factor", dict(type=float))]),
    "hjb-residual": (cmd_hjb_residual, "classical residual of the closed-form value",
                     {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "probes": 100, "spacing": 0.01, "tol": 1e-3},
                     [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                      ("--sigma", dict(type=float)), ("--probes", dict(type=int)), ("--spacing", dict(type=float)),
                      ("--tol", dict(type=float))]),
    "stability": (cmd_stability, "value change under coefficient perturbations",
                  {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "which": "q", "eps": (0.2, 0.1, 0.05),
                   "dt": 1e-2, "horizon": 4.0, "paths": 4000},
                  [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                   ("--sigma", dict(type=float)), ("--which", dict(choices=("q", "b"))), ("--eps", dict(type=floats))]),
    "reduce-check": (cmd_reduce_check, "point-dependence certificate and embedding check",
                     {"fixture": "no_delay_lq", "lam": 3.0, "sigma": 1.0, "z": 1.0, "probes": 20, "dt": 1e-2,
                      "horizon": 4.0, "paths": 2000},
                     [("--fixture", dict(choices=CONTROL_FIXTURES)), ("--lambda", dict(type=float, dest="lam")),
                      ("--sigma", dict(type=float)), ("--z", dict(type=float)), ("--probes", dict(type=int))]),
}

POSITIVE = ("dt", "horizon", "paths", "workers", "chunk", "history", "samples", "mixed_samples", "pairs", "n_max",
            "probes", "size", "epsilon", "delta0", "lam", "inner_paths", "spacing", "tol", "atol", "factor", "d",
            "rel_tol", "gauge_M")


def build_parser():
    parser = argparse.ArgumentParser(prog="hjbdelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name, (_, help_, _, extra) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--history", type=float, help="history window length")
        p.add_argument("--workers", type=int)
        p.add_argument("--chunk", type=int, help="paths per work unit")
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or .)")
        for flag, kw in extra:
            p.add_argument(flag, **kw)
    return parser


def _actions(parser, command):
    sp = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    return {a.dest: a for a in sp._actions if a.dest != "help"}


def _coerce(action, key, raw):
    conv = action.type or str
    try:
        val = conv(raw)
    except (ValueError, argparse.ArgumentTypeError) as e:
        raise ConfigError(f"config key {key!r}: {e}") from None
    if action.choices is not None and val not in action.choices:
        raise ConfigError(f"config key {key!r}: {val!r} not in {list(action.choices)}")
    return val


def read_config(path, actions):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text()
        cp.read_string("[run]\n" + text)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    out = {}
    for key, raw in cp["run"].items():
        k = key.replace("-", "_")
        k = "lam" if k == "lambda" else k
        if k not in actions or k in ("config",):
            raise ConfigError(f"unknown config key {key!r}")
        out[k] = _coerce(actions[k], key, raw)
    return out


def resolve(parser, args):
    command = args.command
    given = {k: v for k, v in vars(args).items() if k != "command"}
    settings = dict(COMMON_DEFAULTS)
    settings.update({"dt": 1e-2, "horizon": 1.0, "paths": 1000})
    settings.update(SUBCOMMANDS[command][2])
    if given.get("config"):
        settings.update(read_config(given["config"], _actions(parser, command)))
    settings.update(given)
    for k in POSITIVE:
        v = settings.get(k)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"{k} must be positive, got {v!r}")
    if settings["dt"] > settings["horizon"]:
        raise ConfigError("dt must not exceed the horizon")
    for k in ("t", "eps", "deltas"):
        if k in settings and any(not v > 0 for v in settings[k]):
            raise ConfigError(f"{k} entries must be positive")
    return command, settings


def render_csv(command, settings, report):
    buf = io.StringIO()
    buf.write(f"# hjbdelay {command}\n")
    for k in sorted(settings):
        if k not in NON_SEMANTIC:
            buf.write(f"# {k}={_fmt(settings[k])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for r in report.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def render_summary(command, settings, report):
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [f"# hjbdelay {command}", f"# generated: {now}"]
    lines += [f"# {k}={_fmt(settings[k])}" for k in sorted(settings)]
    for name, ok, detail in report.checks:
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f"  {detail}" if detail else ""))
    npass = sum(ok for _, ok, _ in report.checks)
    lines.append(f"RESULT {'PASS' if report.passed else 'FAIL'} ({npass}/{len(report.checks)} checks)")
    return "\n".join(lines) + "\n"


def run(command, settings):
    """Execute one subcommand; returns ``(exit_code, report)``."""
    out_dir = Path(settings.get("output") or os.environ.get(OUTPUT_ENV) or ".")
    handler = SUBCOMMANDS[command][0]
    report = handler(settings)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{command}.csv").write_text(render_csv(command, settings, report))
    summary = render_summary(command, settings, report)
    (out_dir / f"{command}_summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return (EXIT_OK if report.passed else EXIT_CHECK), report


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        command, settings = resolve(parser, args)
        return run(command, settings)[0]
    except ValueError as e:
        # ConfigError, and library precondition failures on the given settings
        sys.stderr.write(f"hjbdelay: invalid configuration: {e}\n")
        return EXIT_CONFIG
    except Exception:  # noqa: BLE001 - any other failure is a runtime fault
        traceback.print_exc()
        return EXIT_FAULT


def console_main():
    sys.exit(main())
