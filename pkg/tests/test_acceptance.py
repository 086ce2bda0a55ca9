"""The eleven acceptance criteria at their stated sizes and tolerances.

Each test records one PASS/FAIL line (shown in the terminal summary) before
asserting.
"""

import math
import time

import numpy as np
import pytest

from conftest import CLI_SMALL
from hjbdelay import cli
from hjbdelay.calculus import ito_residuals, power_functional
from hjbdelay.control import (
    ControlFamily,
    canonical_path,
    dpp_residual,
    exp_memory_linear,
    lipschitz_check_V,
    lq_value,
    no_delay_lq,
    riccati_coefficient,
    shift_modulus_check,
    value_V,
)
from hjbdelay.gauge import (
    AnchoredGauge,
    GaugeSpec,
    counterexample_pair,
    derivative_check,
    gauge_property_check,
    upsilon_bar,
    verify_inequalities,
)
from hjbdelay.hjb import classical_residual, lq_functional, stability_experiment
from hjbdelay.paths import HistoryPath, TimedPath, norm1_distance, random_paths
from hjbdelay.rng import probe_generator
from hjbdelay.sde import SimConfig, brownian, coupling_constant, moment_estimates, ornstein_uhlenbeck
from hjbdelay.variational import UpsilonBarGauge, borwein_preiss, default_deltas, random_lattice_domain, verify_result

LAM, SIG, Z = 3.0, 1.0, 1.0


def test_1_gauge_inequalities(criterion):
    start = time.perf_counter()
    failures = []
    for m in (1, 2, 3):
        for j, M in enumerate((3.0, 5.0)):
            rng = probe_generator(1, 10 * m + j)
            for chk in verify_inequalities(GaugeSpec(m, M), 10_000, rng, mixed_samples=1000):
                if chk.name in ("two_sided_bound", "subadditivity") and (chk.skipped or not chk.passed):
                    failures.append(f"{chk.name}[m={m},M={M:g}] slack={chk.worst_slack:.2e}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 10.0
    criterion(1, ok, f"two-sided bound and subadditivity, 6 specs x 1e4 paths, "
                     f"{len(failures)} violations, {elapsed:.2f}s")
    assert ok, failures


def test_2_derivative_formulas(criterion):
    rows, s = derivative_check(1000, seed=2)
    # every compared probe passes and all probes are non-kink; rejected kink draws are filtered, not compared
    ok = s["probes"] == 1000 and s["passed"] >= 990 and s["failed"] == 0
    criterion(2, ok, f"{s['passed']}/{s['probes']} non-kink probes match (rtol 1e-5, atol 1e-7) over "
                     f"{len(rows)} entries, worst error {s['worst_tol_ratio']:.2f} x tolerance, "
                     f"{s['kink_rejected']} kink draws filtered")
    assert ok, s


def test_3_counterexample_and_gauge_property(criterion):
    spec = GaugeSpec(3, 3.0)
    bad = []
    for n in range(1, 1001):
        p, q = counterexample_pair(n)
        if not (upsilon_bar(spec, p, q) <= 1.0 / n and norm1_distance(p, q) >= 1.0):
            bad.append(n)
    ratio = gauge_property_check(spec, 10_000, probe_generator(3, 0))
    ok = not bad and ratio <= 1.0
    criterion(3, ok, f"counterexample n=1..1000: {len(bad)} failures; gauge property on 1e4 pairs: "
                     f"max d_inf/(d^(1/6)+d^(1/2)) = {ratio:.4f}")
    assert ok


@pytest.mark.slow
def test_4_functional_ito(criterion):
    xi = canonical_path(0.5)
    funcs = {
        "|x(0)|^2": power_functional(1, [0.0]),
        "Y^{1,3}": AnchoredGauge(GaugeSpec(1, 3.0), TimedPath(0.0, HistoryPath.zero(1, 4.0)), "upsilon").as_functional(),
    }
    procs = {"brownian": brownian(), "ou": ornstein_uhlenbeck()}
    notes, ok = [], True
    for fname, f in funcs.items():
        for pname, coeffs in procs.items():
            mabs = []
            for dt in (1e-3, 2.5e-4):
                r = ito_residuals(f, coeffs, xi, None, SimConfig(dt=dt, horizon=1.0, paths=10_000, seed=4))
                se = r.std(ddof=1) / math.sqrt(len(r))
                ok &= abs(r.mean()) <= 3 * se
                mabs.append(np.abs(r).mean())
            ratio = mabs[0] / mabs[1]
            ok &= ratio >= 1.6
            notes.append(f"{fname}/{pname} ratio {ratio:.2f}")
    criterion(4, ok, "signed mean within 3 SE at both steps; mean|res| decay: " + ", ".join(notes))
    assert ok


def test_5_moment_estimates(criterion):
    coeffs = ornstein_uhlenbeck(L=1.0)
    xi, xi2 = canonical_path(1.0), canonical_path(1.5)
    vals = {}
    for dt in (1e-2, 1e-3):
        cfg = SimConfig(dt=dt, horizon=2.0, paths=10_000, seed=5, chunk=2048)
        m = moment_estimates(coeffs, xi, 0.0, -4.0, cfg)
        vals[dt] = {"C_hat": m.c_hat, "C0_hat": m.c0_hat, "C_p2": coupling_constant(coeffs, xi, xi2, 0.0, cfg)}
    changes = {k: abs(vals[1e-3][k] - vals[1e-2][k]) / abs(vals[1e-2][k]) for k in vals[1e-2]}
    finite = all(math.isfinite(v) for d in vals.values() for v in d.values())
    ok = finite and all(c < 0.25 for c in changes.values())
    criterion(5, ok, "relative change dt 1e-2 -> 1e-3: " + ", ".join(f"{k} {c:.1%}" for k, c in changes.items()))
    assert ok, vals


@pytest.mark.slow
def test_6_lq_oracle(criterion):
    a = (-3 + math.sqrt(13)) / 2
    ref = a + a / 3
    assert riccati_coefficient(LAM) == pytest.approx(a, rel=1e-15)
    assert lq_value(Z, LAM, SIG) == pytest.approx(ref, rel=1e-15)
    prob = no_delay_lq(LAM, SIG)
    assert len(prob.actions) == 9
    est = value_V(canonical_path(Z), prob, SimConfig(dt=1e-3, horizon=4.0, paths=100_000, seed=6, chunk=8192))
    diff = est.value - ref
    mc_ok = -3 * est.std_error - est.tail_bound <= diff <= max(3 * est.std_error, 0.02 * ref)
    v = lq_functional(LAM, SIG)
    fine = np.round(np.arange(-2, 2.0001, 0.01), 10)
    rng = probe_generator(6, 400)
    xs = random_paths(rng, 100, 1, 16)
    ts = rng.uniform(0.0, 1.0, size=100)
    res = [classical_residual(v, x, float(t), prob, fine).residual for x, t in zip(xs, ts)]
    coarse = [classical_residual(v, x, float(t), prob).residual for x, t in zip(xs, ts)]
    worst = max(abs(r) for r in res)
    ok = mc_ok and worst <= 1e-3
    criterion(6, ok, f"V(1)={ref:.6f}, MC {est.value:.6f} +- {est.std_error:.1e} (tail {est.tail_bound:.1e}, "
                     f"{est.argmin}); max |residual| {worst:.2e} on 100 probes (spacing 0.01), "
                     f"{max(coarse):.2e} on the 9-action set")
    assert ok


@pytest.mark.slow
def test_7_dpp(criterion):
    notes, ok = [], True
    prob = no_delay_lq(LAM, SIG)
    fam = ControlFamily(np.round(np.arange(-2, 2.0001, 0.01), 10), None, [riccati_coefficient(LAM)])
    exact = prob.exact_value
    x = canonical_path(Z)
    for t in (0.1, 0.5):
        cfg = SimConfig(dt=1e-3, horizon=t, paths=100_000, seed=7, chunk=8192)
        r = dpp_residual(x, t, prob, cfg, fam, inner_value=lambda st: exact(st.endpoint[..., 0]), lhs_value=exact(Z))
        ok &= abs(r.residual) <= 3 * r.std_error
        notes.append(f"LQ t={t:g}: {r.residual:.2e} vs 3se {3 * r.std_error:.2e}")
    t = 0.5
    mem = exp_memory_linear(LAM, SIG, switch_times=(0.0, t))
    three = ControlFamily(mem.actions)
    r = dpp_residual(x, t, mem, SimConfig(dt=1e-2, horizon=6.0, paths=1000, seed=7, chunk=50), three,
                     inner_family=three, inner_paths=100)
    ok &= r.within_budget
    notes.append(f"ExpMemory t={t:g}: {r.residual:.2e} vs budget {r.budget:.2e}")
    criterion(7, ok, "; ".join(notes))
    assert ok


@pytest.mark.slow
def test_8_value_regularity(criterion):
    cfg = SimConfig(dt=1e-2, horizon=4.0, paths=2000, seed=8)
    notes, ok = [], True
    lq, mem = no_delay_lq(LAM, SIG), exp_memory_linear(LAM, SIG)
    for prob in (lq, mem):
        lip = lipschitz_check_V(prob, cfg, 20)
        ok &= lip.stable(2.0)
        notes.append(f"{prob.name} Lipschitz ratios {', '.join(f'{v:.3f}' for v in lip.ratios)}")
    # the shift-modulus ladder is asserted on the LQ fixture; the delayed
    # fixture is reported (its gap grows like delta against a sqrt(delta) shape)
    sm = shift_modulus_check(lq, cfg, [0.01, 0.1, 0.5], canonical_path(Z))
    ok &= sm.stable(2.0)
    notes.append(f"LQ shift C' {', '.join(f'{v:.3f}' for v in sm.ratios)}")
    sm_mem = shift_modulus_check(mem, cfg, [0.01, 0.1, 0.5], canonical_path(Z))
    notes.append(f"ExpMemory shift C' {', '.join(f'{v:.4f}' for v in sm_mem.ratios)} "
                 f"(spread {sm_mem.spread:.2f}, reported)")
    criterion(8, ok, "; ".join(notes))
    assert ok


def test_9_perturbed_maximization(criterion):
    rng = probe_generator(9, 0)
    rho = UpsilonBarGauge(GaugeSpec(3, 3.0))
    bad, sizes, moved = [], [], 0
    for k in range(50):
        size = int(rng.integers(50, 10_001))
        dom = random_lattice_domain(rng, size, n_nodes=17)
        kind = k % 3
        ends = dom.values[:, -1, 0]
        if kind == 0:
            fv = -ends**2 - 0.1 * dom.times
        elif kind == 1:
            fv = -np.abs(dom.values[:, :, 0]).max(axis=1) - 0.1 * dom.times
        else:
            fv = np.round(-ends**2, 1)  # many exact ties
        eps = float(rng.uniform(0.05, 1.0))
        cands = np.nonzero(fv >= fv.max() - eps)[0]
        start = int(rng.choice(cands))
        # small weights let the search move; large ones pin it to the start
        delta0 = float(10.0 ** rng.uniform(-6.0, 0.0))
        res = borwein_preiss(None, rho, default_deltas(200, delta0), eps, start, dom, fvals=fv)
        chk = verify_result(res, None, rho, eps, dom, fvals=fv)
        moved += res.index != start
        sizes.append(size)
        if not (chk["i"] and chk["ii"] and chk["iii"]):
            bad.append(k)
    ok = not bad
    criterion(9, ok, f"50 domains of {min(sizes)}..{max(sizes)} candidates: {50 - len(bad)} satisfy (i)-(iii), "
                     f"{moved} searches moved off the start")
    assert ok


@pytest.mark.slow
def test_10_stability_ladder(criterion):
    cfg = SimConfig(dt=1e-2, horizon=4.0, paths=4000, seed=10)
    xs = [canonical_path(z) for z in (-1.0, 0.0, 1.0)]
    eps = [0.2, 0.1, 0.05]
    q_rows = stability_experiment(lambda **kw: no_delay_lq(LAM, SIG, **kw), eps, cfg, xs, "q")
    b_rows = stability_experiment(lambda **kw: no_delay_lq(LAM, SIG, **kw), eps, cfg, xs, "b")
    q_ok = all(abs(r.value_distance - r.predicted) <= 3 * r.std_error + r.bias for r in q_rows)
    dist = [r.value_distance for r in b_rows]
    b_ok = all(u > v for u, v in zip(dist, dist[1:]))
    ok = q_ok and b_ok
    criterion(10, ok, "q: " + ", ".join(f"|dV-eps/lam|={abs(r.value_distance - r.predicted):.1e}" for r in q_rows)
              + "; b: " + ", ".join(f"{v:.4f}" for v in dist))
    assert ok


@pytest.mark.slow
def test_11_cli_determinism(tmp_path, criterion, capsys):
    differing = []
    for name, args in CLI_SMALL.items():
        blobs = []
        for w in (1, 8):
            out = tmp_path / f"{name}-{w}"
            code = cli.main([name, *args, "--seed", "11", "--chunk", "16", "--workers", str(w), "--output", str(out)])
            blobs.append((code, (out / f"{name}.csv").read_bytes()))
        if blobs[0] != blobs[1]:
            differing.append(name)
    capsys.readouterr()
    ok = not differing
    criterion(11, ok, f"{len(CLI_SMALL)} subcommands byte-identical CSV for 1 vs 8 workers"
              + (f"; differing: {differing}" if differing else ""))
    assert ok
