"""levylab: probabilistic solvers and stability experiments for semilinear
Cauchy problems driven by Levy and Levy-type integro-differential operators.
"""

from . import bsde, density, fk, lab, nonlinearity, sampling, sde, symbols
from .errors import LevyLabError

__all__ = [
    "symbols",
    "density",
    "sampling",
    "sde",
    "nonlinearity",
    "fk",
    "bsde",
    "lab",
    "LevyLabError",
]

__version__ = "0.1.0"
