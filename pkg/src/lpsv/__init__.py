"""Large-pool stochastic-volatility credit model: parameter gate, CIR engine,
finite pool, conditional and joint SPDE solvers, and regularity diagnostics."""
from .params import XSTAR, ExponentSet, InfeasibleExponents, ModelParams, feasible_exponents, validate_params

__version__ = "0.1.0"

__all__ = ["XSTAR", "ExponentSet", "InfeasibleExponents", "ModelParams", "feasible_exponents",
           "validate_params", "__version__"]
