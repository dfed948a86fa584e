"""Sparse conic interior-point solver for quadratic and 3x3 PSD cone programs."""

from .program import ConeBlock, ConeProgram, ConicSolution
from .ipm import solve
from .cones import smat3, svec3

__all__ = [
    "ConeBlock",
    "ConeProgram",
    "ConicSolution",
    "solve",
    "smat3",
    "svec3",
]
