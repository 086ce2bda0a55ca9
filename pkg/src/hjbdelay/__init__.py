"""Numerics for path-dependent HJB equations with infinite delay.

Submodules: ``paths`` (histories, shifts, metrics), ``calculus`` (Dupire
derivatives, Ito residuals), ``gauge`` (smooth gauge functionals),
``variational`` (perturbed maximization), ``sde`` (Euler simulation and
moment estimates), ``control`` (value estimation, DPP, regularity),
``hjb`` (Hamiltonian, residuals, viscosity probes) and ``cli``.
"""

from .calculus import FunctionalWithDerivatives, horizontal_fd, ito_residual, vertical_grad_fd, vertical_hess_fd
from .control import ControlFamily, ControlProblem, dpp_residual, exp_memory_linear, lq_value, no_delay_lq, value_V
from .gauge import AnchoredGauge, GaugeSpec, s_m, upsilon, upsilon_bar
from .hjb import classical_residual, hamiltonian, viscosity_probe
from .paths import HistoryPath, TimedPath, bump, d_infinity, shift
from .sde import Coefficients, SimConfig, euler_simulate, lambda_uniqueness, theta
from .variational import borwein_preiss

__version__ = "0.1.0"

__all__ = [
    "AnchoredGauge",
    "Coefficients",
    "ControlFamily",
    "ControlProblem",
    "FunctionalWithDerivatives",
    "GaugeSpec",
    "HistoryPath",
    "SimConfig",
    "TimedPath",
    "borwein_preiss",
    "bump",
    "classical_residual",
    "d_infinity",
    "dpp_residual",
    "euler_simulate",
    "exp_memory_linear",
    "hamiltonian",
    "horizontal_fd",
    "ito_residual",
    "lambda_uniqueness",
    "lq_value",
    "no_delay_lq",
    "s_m",
    "shift",
    "theta",
    "upsilon",
    "upsilon_bar",
    "value_V",
    "vertical_grad_fd",
    "vertical_hess_fd",
    "viscosity_probe",
]
