"""Analytic vertical derivatives of an anchored gauge next to finite differences."""

import numpy as np

from hjbdelay import AnchoredGauge, GaugeSpec, HistoryPath
from hjbdelay.calculus import vertical_grad_fd, vertical_hess_fd
from hjbdelay.paths import TimedPath

anchor = TimedPath(0.0, HistoryPath.zero(1, 2.0))
x = HistoryPath([-2.0, -1.0, 0.0], [[0.0], [1.5], [0.4]])
p = TimedPath(0.5, x)
for m in (1, 2, 3):
    g = AnchoredGauge(GaugeSpec(m, 3.0), anchor, "upsilon_bar")
    ft, fx, fxx = g.derivatives(p)
    print(f"m={m}  value={g(p):.6f}  dt={ft:.6f}")
    print(f"      dx  analytic={fx[0]:.8f}  fd={vertical_grad_fd(g, p, 1e-3, richardson=True)[0]:.8f}")
    print(f"      dxx analytic={fxx[0, 0]:.8f}  fd={vertical_hess_fd(g, p, 1e-3, richardson=True)[0, 0]:.8f}")
