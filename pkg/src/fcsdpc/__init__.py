"""Finite-control-set data-driven predictive control.

A subspace predictor fitted from Hankel data is turned into an implicit
predictor, the regularized cost is condensed into a truncated integer
least-squares problem, and that problem is solved by sphere decoding with
exhaustive enumeration as the optimality oracle.
"""
from .condense import WeightConfig, condense_dpc, condense_mpc, lower_factor
from .data import DataMatrix, NoiseSpec, add_output_noise, build_hankel, check_rank
from .decoder import BACKEND, IlsProblem, SolveResult, enumerate_ils, solve, sphere_decode
from .loop import DpcController, run_closed_loop, timing_summary
from .plant import ControlSet, PlantModel, Trajectory, multistep, simulate
from .predictor import RegularizerKind, fit_spc, implicit_predictor, reg_weights

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ControlSet", "DataMatrix", "DpcController", "IlsProblem", "NoiseSpec",
    "PlantModel", "RegularizerKind", "SolveResult", "Trajectory", "WeightConfig",
    "add_output_noise", "build_hankel", "check_rank", "condense_dpc", "condense_mpc",
    "enumerate_ils", "fit_spc", "implicit_predictor", "lower_factor", "multistep",
    "reg_weights", "run_closed_loop", "simulate", "solve", "sphere_decode", "timing_summary",
]
