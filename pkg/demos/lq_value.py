"""Monte Carlo value of the no-delay LQ fixture against its Riccati solution."""

from hjbdelay import SimConfig, lq_value, no_delay_lq, value_V
from hjbdelay.control import canonical_path

lam, sigma0 = 3.0, 1.0
problem = no_delay_lq(lam, sigma0)
cfg = SimConfig(dt=1e-2, horizon=4.0, paths=20_000, seed=0)
for z in (-1.0, 0.0, 0.5, 1.0):
    est = value_V(canonical_path(z), problem, cfg)
    ref = float(lq_value(z, lam, sigma0))
    print(f"z={z:+.1f}  riccati={ref:.5f}  mc={est.value:.5f} +- {est.std_error:.1e}  best={est.argmin}")
