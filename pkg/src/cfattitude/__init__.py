"""Complementary-filter attitude estimation and control on SO(3)."""

from .controller import PAPER_GAINS, PAPER_REFS, SWEEP_GAINS, ControllerGains
from .filters import FilterDesign, FilterState, MeasurementFrame, binomial_design, make_filter_design
from .hurwitz import binomial_gains, in_hbar, is_hurwitz
from .lyapunov import solve_lyapunov
from .triad import triad, triad_quaternion

__version__ = "0.1.0"
