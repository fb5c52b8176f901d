"""Numerical laboratory for nonlinear boundary diffusion driven by the
Dirichlet-to-Neumann map on smooth planar domains."""

__version__ = "0.1.0"

from .geometry import BoundaryCurve, make_curve
from .dtn import DtNOperator, build_dtn, build_dtn_circle, build_dtn_general
from .stationary import ProblemSpec, Regime, SteadyState, make_problem, solve_steady
from .evolution import EvolveControls, FlowMode, Trajectory, evolve
from .spectrum import LinearizedSpectrum, linearized_spectrum

__all__ = [
    "BoundaryCurve", "make_curve", "DtNOperator", "build_dtn", "build_dtn_circle",
    "build_dtn_general", "ProblemSpec", "Regime", "SteadyState", "make_problem",
    "solve_steady", "EvolveControls", "FlowMode", "Trajectory", "evolve",
    "LinearizedSpectrum", "linearized_spectrum",
]
