"""Containers for conic programs in variable-block standard form.

A program is ``min <c, x>  s.t.  A x = b,  x in K`` where K is a product of
ordered cone blocks over contiguous variable ranges.  The dual slack is
``s = c - A^T y`` with every s-block in the dual cone (free blocks pair with
``{0}``; the other kinds are self-dual).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

KINDS = ("zero", "free", "quad", "psd3")


@dataclass(frozen=True)
class ConeBlock:
    """One cone over ``dim`` consecutive variables.

    ``quad`` is the quadratic (Lorentz) cone {z : |(z_2..z_d)| <= z_1};
    ``psd3`` the 3x3 PSD cone in scaled-vector coordinates
    (11, 22, 33, sqrt2*12, sqrt2*13, sqrt2*23), always dim 6.
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.kind == "psd3" and self.dim != 6:
            raise ValueError("psd3 blocks have exactly 6 coordinates")
        if self.dim < 1:
            raise ValueError("cone blocks must have positive dimension")


@dataclass
class ConeProgram:
    c: np.ndarray
    A: sp.spmatrix
    b: np.ndarray
    cones: list[ConeBlock]
    labels: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.b.shape[0]

    def validate(self) -> None:
        total = sum(blk.dim for blk in self.cones)
        if total != self.n_vars:
            raise ValueError(
                f"cone dims sum to {total} but the program has {self.n_vars} variables")
        if self.A.shape != (self.n_rows, self.n_vars):
            raise ValueError(
                f"A has shape {self.A.shape}, expected {(self.n_rows, self.n_vars)}")
        if self.n_rows < 1:
            raise ValueError("programs without equality rows are not supported")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))):
            raise ValueError("c and b must be finite")


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str  # Optimal | MaxIter | NumericalFailure | Infeasible
    rel_gap: float
    primal_res: float
    dual_res: float
    iterations: int
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"
