"""Optimal dynamic portfolio selection through the Riccati-transformed HJB equation.

The pipeline: a parametric simplex-constrained QP yields the diffusion
function of the transformed equation, a semi-implicit finite-volume scheme
evolves the risk-aversion field, and the value function, companion function
and optimal weights are reconstructed and cross-checked against a direct
policy-iteration HJB solver.
"""

from ._kernels import backend_name
from .alpha import AlphaTable, MarketModel, build_alpha_table, solve_parametric_qp
from .market import estimate_moments, load_returns_csv, synthetic_five_asset
from .pde import BoundaryCondition, SolverGrid, evolve
from .reconstruct import extract_weights, reconstruct_a, reconstruct_psi, reconstruct_v
from .utility import ArctanUtility, CaraUtility, IntertemporalUtility

__version__ = "0.1.0"

__all__ = [
    "AlphaTable",
    "ArctanUtility",
    "BoundaryCondition",
    "CaraUtility",
    "IntertemporalUtility",
    "MarketModel",
    "SolverGrid",
    "backend_name",
    "build_alpha_table",
    "estimate_moments",
    "evolve",
    "extract_weights",
    "load_returns_csv",
    "reconstruct_a",
    "reconstruct_psi",
    "reconstruct_v",
    "solve_parametric_qp",
    "synthetic_five_asset",
    "__version__",
]
