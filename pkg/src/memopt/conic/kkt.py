"""Regularized quasi-definite KKT solves for the interior-point loop.

The augmented system is

    [ -(W^{-2} + delta I)   A^T     ] [dx]   [rx]
    [        A            delta I   ] [dy] = [ry]

factored once per iteration with SuperLU configured for symmetric fill-in
ordering and no pivoting outside the diagonal (the static regularization
makes that safe).  Each solve is followed by one step of iterative
refinement against the *unregularized* matrix, which removes most of the
perturbation introduced by delta.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class KKTSolver:
    def __init__(self, A: sp.csr_matrix, delta: float = 1e-9):
        self.A = A.tocsr()
        self.AT = self.A.T.tocsr()
        self.m, self.n = A.shape
        self.delta = float(delta)
        self._lu = None
        self._wm2 = None

    def factor(self, wm2: sp.spmatrix) -> None:
        """Refactor for a new scaling matrix; raises RuntimeError on failure."""
        n, m, d = self.n, self.m, self.delta
        self._wm2 = wm2.tocsr()
        K = sp.bmat(
            [
                [-(self._wm2 + d * sp.eye(n)), self.AT],
                [self.A, d * sp.eye(m)],
            ],
            format="csc",
        )
        try:
            self._lu = spla.splu(
                K,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # singular factor
            self._lu = None
            raise RuntimeError(f"KKT factorization failed: {exc}") from exc

    def _apply_exact(self, dx, dy):
        """Unregularized matrix-vector product [ -W^{-2} dx + A^T dy ; A dx ]."""
        return (-self._wm2 @ dx + self.AT @ dy, self.A @ dx)

    def solve(self, rx: np.ndarray, ry: np.ndarray, max_refine: int = 3):
        """Solve against [rx; ry] with iterative refinement; returns (dx, dy).

        Refinement measures the residual against the unregularized matrix, so
        it also removes most of the delta perturbation; it stops early once
        the residual no longer improves.
        """
        rhs = np.concatenate([rx, ry])
        sol = self._lu.solve(rhs)
        dx, dy = sol[: self.n], sol[self.n:]
        scale = np.linalg.norm(rhs) + 1e-300

        def residual(dx_, dy_):
            ex, ey = self._apply_exact(dx_, dy_)
            res = np.concatenate([rx - ex, ry - ey])
            return res, np.linalg.norm(res) / scale

        res, rnorm = residual(dx, dy)
        for _ in range(max_refine):
            if not rnorm > 1e-14:  # converged (or NaN): stop
                break
            corr = self._lu.solve(res)
            cand = (dx + corr[: self.n], dy + corr[self.n:])
            cres, crnorm = residual(*cand)
            if not crnorm < rnorm:  # no longer improving: keep previous
                break
            dx, dy = cand
            res, rnorm = cres, crnorm
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise RuntimeError("KKT solve produced non-finite values")
        return dx, dy
