"""Perturbed maximization on a random lattice domain, with exhaustive verification."""

import numpy as np

from hjbdelay import GaugeSpec, borwein_preiss
from hjbdelay.variational import UpsilonBarGauge, default_deltas, random_lattice_domain, verify_result

rng = np.random.default_rng(7)
dom = random_lattice_domain(rng, 2000)
fv = -dom.values[:, -1, 0] ** 2 - 0.1 * dom.times
eps = 0.3
cands = np.nonzero(fv >= fv.max() - eps)[0]
start = int(cands[np.argmin(fv[cands])])  # the weakest admissible start
rho = UpsilonBarGauge(GaugeSpec(3, 3.0))
res = borwein_preiss(None, rho, default_deltas(100, 1e-4), eps, start, dom, fvals=fv)
print("start", start, "f", fv[start], "-> maximizer", res.index, "f", fv[res.index], "centers", res.center_indices)
print("properties", {k: v for k, v in verify_result(res, None, rho, eps, dom, fvals=fv).items() if k != "perturbed"})
