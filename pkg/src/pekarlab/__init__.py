"""Pekar-Tomasevich bipolaron: single polaron, rotation-invariant bipolaron
minimization and second-order (Hessian) analysis around the minimizer."""

from .bipolaron import (BipolaronSolution, RstFunction, SweepRow, bisect_Uc_symm, energy_rst, minimize_rst,
                        rearrange_t, sweep_U, symmetrize, zhislin_trial)
from .config import ConfigError, RunConfig
from .errors import ConvergenceError, ValidationError
from .grid import RadialFunction, RadialGrid, TQuadrature, build_radial_grid, build_t_quadrature
from .hessian import (ChannelFunction, HessianReport, apply_H, apply_L, c_curve, hessian_form, lift_rst,
                      min_eig_deflated, translation_modes)
from .polaron import PolaronSolution, solve_single_polaron

__version__ = "0.1.0"

__all__ = [
    "BipolaronSolution", "RstFunction", "SweepRow", "bisect_Uc_symm", "energy_rst", "minimize_rst",
    "rearrange_t", "sweep_U", "symmetrize", "zhislin_trial", "ConfigError", "RunConfig",
    "ConvergenceError", "ValidationError", "RadialFunction", "RadialGrid", "TQuadrature",
    "build_radial_grid", "build_t_quadrature", "ChannelFunction", "HessianReport", "apply_H", "apply_L",
    "c_curve", "hessian_form", "lift_rst", "min_eig_deflated", "translation_modes", "PolaronSolution",
    "solve_single_polaron",
]
