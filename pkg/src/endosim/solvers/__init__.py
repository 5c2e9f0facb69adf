"""Desk-scale inverse solvers: photometric depth recovery and mask-based state fitting."""
from .depth import DepthResult, DepthSolverConfig, recover_depth
from .state import StateFit, StateFitConfig, fit_state

__all__ = ["DepthResult", "DepthSolverConfig", "recover_depth", "StateFit", "StateFitConfig", "fit_state"]
