"""Numerical laboratory for doubling indices, harmonic approximation and critical-set coverings.

Solutions of divergence-form elliptic equations with Hölder leading
coefficients are sampled (analytically or from a finite-difference solve) and
audited in dimensions two and three.
"""
from ._kernels import backend
from .errors import (DegenerateWindowError, DomainError, IndefiniteOperatorError, NodalabError, NotGoodBallError,
                     RecursionCapError, ScenarioError, SolverError)

__version__ = "0.1.0"

__all__ = [
    "backend",
    "NodalabError",
    "DegenerateWindowError",
    "DomainError",
    "SolverError",
    "IndefiniteOperatorError",
    "ScenarioError",
    "RecursionCapError",
    "NotGoodBallError",
    "__version__",
]
