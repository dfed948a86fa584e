"""Cone kernels: Nesterov-Todd scalings, Jordan algebra, step lengths.

The workspace compiles a block list into index arrays grouped by kind
(nonnegative coordinates, quadratic cones grouped by dimension, 3x3 PSD
blocks in scaled-vector coordinates) and carries the per-iteration scaling
state.  All operations act on full-length vectors; coordinates belonging to
free blocks are left at zero by every cone operation.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .eig3 import eigh3, eigvals3

SQRT2 = np.sqrt(2.0)

# svec basis index pairs: diagonal first, then (12, 13, 23) scaled by sqrt2
_SVEC_IJ = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def svec3(M):
    """Symmetric (..., 3, 3) -> (..., 6) scaled-vector coordinates."""
    return np.stack(
        [
            M[..., 0, 0],
            M[..., 1, 1],
            M[..., 2, 2],
            SQRT2 * M[..., 0, 1],
            SQRT2 * M[..., 0, 2],
            SQRT2 * M[..., 1, 2],
        ],
        axis=-1,
    )


def smat3(v):
    """Inverse of :func:`svec3`."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 1]
    out[..., 2, 2] = v[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 3] / SQRT2
    out[..., 0, 2] = out[..., 2, 0] = v[..., 4] / SQRT2
    out[..., 1, 2] = out[..., 2, 1] = v[..., 5] / SQRT2
    return out


def _basis6():
    E = np.zeros((6, 3, 3))
    for k, (i, j) in enumerate(_SVEC_IJ):
        if i == j:
            E[k, i, j] = 1.0
        else:
            E[k, i, j] = E[k, j, i] = 1.0 / SQRT2
    return E


_E6 = _basis6()


def _spectral_fn(w, Q, f):
    return np.einsum("nik,nk,njk->nij", Q, f(w), Q)


def _floor_eigs(w, rel=1e-14):
    """Clamp computed eigenvalues of derived SPD products away from zero.

    Matrices like S^1/2 X S^1/2 are formed in floating point, so their
    smallest eigenvalues carry an absolute error of order eps times the
    largest one; near convergence that error can cross zero.  Flooring at a
    tiny relative level keeps the scaling SPD without visibly perturbing it.
    """
    wmax = np.max(w, axis=-1, keepdims=True)
    return np.maximum(w, rel * np.maximum(wmax, 1e-290))


class ConeWorkspace:
    """Scaling state and Jordan operations for one program's cone layout."""

    def __init__(self, cones):
        pos = []
        socs: dict[int, list[np.ndarray]] = {}
        psd = []
        free = []
        offset = 0
        for blk in cones:
            rng = np.arange(offset, offset + blk.dim)
            if blk.kind == "free":
                free.append(rng)
            elif blk.kind == "quad":
                if blk.dim == 1:
                    pos.append(rng)
                else:
                    socs.setdefault(blk.dim, []).append(rng)
            elif blk.kind == "psd3":
                psd.append(rng)
            else:  # zero blocks are eliminated before the workspace is built
                raise ValueError(f"unsupported cone kind {blk.kind!r}")
            offset += blk.dim
        self.n = offset
        self.pos_idx = (
            np.concatenate(pos) if pos else np.zeros(0, dtype=int)
        )
        self.soc_groups = [
            (d, np.vstack(rows)) for d, rows in sorted(socs.items())
        ]
        self.psd_idx = (
            np.vstack(psd) if psd else np.zeros((0, 6), dtype=int)
        )
        self.free_idx = (
            np.concatenate(free) if free else np.zeros(0, dtype=int)
        )
        self.degree = (
            self.pos_idx.size
            + sum(idx.shape[0] for _, idx in self.soc_groups)
            + 3 * self.psd_idx.shape[0]
        )
        # identity element of the Jordan algebra, zero on free coordinates
        e = np.zeros(self.n)
        e[self.pos_idx] = 1.0
        for _, idx in self.soc_groups:
            e[idx[:, 0]] = 1.0
        if self.psd_idx.size:
            e[self.psd_idx[:, 0]] = 1.0
            e[self.psd_idx[:, 1]] = 1.0
            e[self.psd_idx[:, 2]] = 1.0
        self.e = e
        self.lam = np.zeros(self.n)
        self._pos = None
        self._soc = None
        self._psd = None

    # -- scaling ---------------------------------------------------------

    def init_point(self):
        """Unit starting point: x = s = e on the cone, zero elsewhere."""
        return self.e.copy(), self.e.copy()

    def update_scaling(self, x, s) -> bool:
        """Compute the NT scaling at (x, s); False if the pair left the cone."""
        lam = np.zeros(self.n)

        if self.pos_idx.size:
            xp, sp_ = x[self.pos_idx], s[self.pos_idx]
            if np.any(xp <= 0.0) or np.any(sp_ <= 0.0):
                return False
            self._pos = {"w2": xp / sp_, "winv2": sp_ / xp}
            lam[self.pos_idx] = np.sqrt(xp * sp_)
        else:
            self._pos = {}

        soc_state = []
        for d, idx in self.soc_groups:
            X, S = x[idx], s[idx]
            if np.any(X[:, 0] <= 0.0) or np.any(S[:, 0] <= 0.0):
                return False
            zx2 = X[:, 0] ** 2 - np.sum(X[:, 1:] ** 2, axis=1)
            zs2 = S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1)
            # the difference of squares cancels catastrophically right at the
            # boundary; treat violations at roundoff scale as boundary points
            if np.any(zx2 <= -1e-14 * X[:, 0] ** 2):
                return False
            if np.any(zs2 <= -1e-14 * S[:, 0] ** 2):
                return False
            zx2 = np.maximum(zx2, 1e-14 * X[:, 0] ** 2)
            zs2 = np.maximum(zs2, 1e-14 * S[:, 0] ** 2)
            zx, zs = np.sqrt(zx2), np.sqrt(zs2)
            xb = X / zx[:, None]
            sb = S / zs[:, None]
            gam = np.sqrt((1.0 + np.sum(xb * sb, axis=1)) / 2.0)
            w0 = (xb[:, 0] + sb[:, 0]) / (2.0 * gam)
            w1 = (xb[:, 1:] - sb[:, 1:]) / (2.0 * gam[:, None])
            eta = np.sqrt(zx / zs)
            state = {"idx": idx, "w0": w0, "w1": w1, "eta": eta}
            lam_blk = self._soc_apply_v(state, S, sign=+1.0) * eta[:, None]
            state["lam"] = lam_blk
            lam[idx] = lam_blk
            soc_state.append(state)
        self._soc = soc_state

        if self.psd_idx.shape[0]:
            X = smat3(x[self.psd_idx])
            S = smat3(s[self.psd_idx])
            wS, QS = eigh3(S)
            if not np.all(np.isfinite(wS)):
                return False
            # reject only below the eigensolver noise floor: deep-endgame
            # slacks sit closer to the boundary than the computed spectrum
            # can resolve, and flooring handles the gray zone
            if np.any(wS <= -3e-11 * np.max(np.abs(wS), axis=-1, keepdims=True)):
                return False
            wS = _floor_eigs(wS)
            Shalf = _spectral_fn(wS, QS, np.sqrt)
            Sinvh = _spectral_fn(wS, QS, lambda w: 1.0 / np.sqrt(w))
            B = Shalf @ X @ Shalf
            B = (B + np.swapaxes(B, -1, -2)) / 2.0
            wB, QB = eigh3(B)
            if not np.all(np.isfinite(wB)):
                return False
            wB = _floor_eigs(wB)
            Bhalf = _spectral_fn(wB, QB, np.sqrt)
            T = Sinvh @ Bhalf @ Sinvh
            T = (T + np.swapaxes(T, -1, -2)) / 2.0
            wT, QT = eigh3(T)
            if not np.all(np.isfinite(wT)):
                return False
            wT = _floor_eigs(wT)
            Thalf = _spectral_fn(wT, QT, np.sqrt)
            Tinvh = _spectral_fn(wT, QT, lambda w: 1.0 / np.sqrt(w))
            Tinv = _spectral_fn(wT, QT, lambda w: 1.0 / w)
            Lmat = Thalf @ S @ Thalf
            Lmat = (Lmat + np.swapaxes(Lmat, -1, -2)) / 2.0
            wL, QL = eigh3(Lmat)
            if not np.all(np.isfinite(wL)):
                return False
            wL = _floor_eigs(wL)
            Lmat = _spectral_fn(wL, QL, lambda w: w)
            self._psd = {
                "Thalf": Thalf,
                "Tinvh": Tinvh,
                "Tinv": Tinv,
                "Lmat": Lmat,
                "wL": wL,
                "QL": QL,
            }
            lam[self.psd_idx] = svec3(Lmat)
        else:
            self._psd = None

        self.lam = lam
        return True

    @staticmethod
    def _soc_apply_v(state, U, sign):
        """Apply V (sign=+1) or V^{-1} (sign=-1) of the unit scaling point."""
        w0, w1 = state["w0"], sign * state["w1"]
        u0, u1 = U[:, 0], U[:, 1:]
        dot = np.sum(w1 * u1, axis=1)
        top = w0 * u0 + dot
        rest = u0[:, None] * w1 + u1 + (dot / (1.0 + w0))[:, None] * w1
        return np.concatenate([top[:, None], rest], axis=1)

    def apply_W(self, u):
        out = np.zeros(self.n)
        if self.pos_idx.size:
            out[self.pos_idx] = np.sqrt(self._pos["w2"]) * u[self.pos_idx]
        for state in self._soc:
            idx = state["idx"]
            out[idx] = state["eta"][:, None] * self._soc_apply_v(
                state, u[idx], sign=+1.0)
        if self._psd is not None:
            U = smat3(u[self.psd_idx])
            M = self._psd["Thalf"] @ U @ self._psd["Thalf"]
            out[self.psd_idx] = svec3((M + np.swapaxes(M, -1, -2)) / 2.0)
        return out

    def apply_Winv(self, u):
        out = np.zeros(self.n)
        if self.pos_idx.size:
            out[self.pos_idx] = u[self.pos_idx] / np.sqrt(self._pos["w2"])
        for state in self._soc:
            idx = state["idx"]
            out[idx] = self._soc_apply_v(state, u[idx], sign=-1.0) / state[
                "eta"][:, None]
        if self._psd is not None:
            U = smat3(u[self.psd_idx])
            M = self._psd["Tinvh"] @ U @ self._psd["Tinvh"]
            out[self.psd_idx] = svec3((M + np.swapaxes(M, -1, -2)) / 2.0)
        return out

    def wm2_matrix(self) -> sp.csc_matrix:
        """W^{-2} as a sparse matrix (zero rows on free coordinates)."""
        rows, cols, vals = [], [], []
        if self.pos_idx.size:
            rows.append(self.pos_idx)
            cols.append(self.pos_idx)
            vals.append(self._pos["winv2"])
        for state in self._soc:
            idx = state["idx"]
            k, d = idx.shape
            wt = np.concatenate(
                [state["w0"][:, None], -state["w1"]], axis=1)
            blocks = 2.0 * wt[:, :, None] * wt[:, None, :]
            J = np.diag(np.concatenate([[1.0], -np.ones(d - 1)]))
            blocks = (blocks - J) / (state["eta"] ** 2)[:, None, None]
            rows.append(np.repeat(idx, d, axis=1).ravel())
            cols.append(np.tile(idx, (1, d)).ravel())
            vals.append(blocks.reshape(k, -1).ravel())
        if self._psd is not None:
            idx = self.psd_idx
            k = idx.shape[0]
            Tinv = self._psd["Tinv"]
            M = np.einsum("nab,jbc,ncd->njad", Tinv, _E6, Tinv)
            K = svec3(M)  # (k, 6, 6): K[n, j, :] = svec(Tinv E_j Tinv)
            K = np.swapaxes(K, 1, 2)
            rows.append(np.repeat(idx, 6, axis=1).ravel())
            cols.append(np.tile(idx, (1, 6)).ravel())
            vals.append(K.reshape(k, -1).ravel())
        if not rows:
            return sp.csc_matrix((self.n, self.n))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        ).tocsc()

    # -- Jordan algebra ---------------------------------------------------

    def jordan_prod(self, u, v):
        out = np.zeros(self.n)
        if self.pos_idx.size:
            out[self.pos_idx] = u[self.pos_idx] * v[self.pos_idx]
        for _, idx in self.soc_groups:
            U, V = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(U * V, axis=1)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        if self.psd_idx.shape[0]:
            U = smat3(u[self.psd_idx])
            V = smat3(v[self.psd_idx])
            out[self.psd_idx] = svec3((U @ V + V @ U) / 2.0)
        return out

    def lam_sq(self):
        return self.jordan_prod(self.lam, self.lam)

    def jordan_solve_lam(self, v):
        """Solve lam o z = v for z."""
        out = np.zeros(self.n)
        if self.pos_idx.size:
            out[self.pos_idx] = v[self.pos_idx] / self.lam[self.pos_idx]
        for state in self._soc:
            idx = state["idx"]
            L, V = state["lam"], v[idx]
            det = L[:, 0] ** 2 - np.sum(L[:, 1:] ** 2, axis=1)
            dot = np.sum(L[:, 1:] * V[:, 1:], axis=1)
            z0 = (L[:, 0] * V[:, 0] - dot) / det
            z1 = (
                -V[:, :1] * L[:, 1:]
                + (det / L[:, 0])[:, None] * V[:, 1:]
                + (dot / L[:, 0])[:, None] * L[:, 1:]
            ) / det[:, None]
            out[idx[:, 0]] = z0
            out[idx[:, 1:]] = z1
        if self._psd is not None:
            wL, QL = self._psd["wL"], self._psd["QL"]
            V = smat3(v[self.psd_idx])
            Vt = np.swapaxes(QL, -1, -2) @ V @ QL
            denom = (wL[:, :, None] + wL[:, None, :]) / 2.0
            Z = QL @ (Vt / denom) @ np.swapaxes(QL, -1, -2)
            out[self.psd_idx] = svec3((Z + np.swapaxes(Z, -1, -2)) / 2.0)
        return out

    # -- step lengths ------------------------------------------------------

    def max_step(self, u) -> float:
        """Largest alpha with lam + alpha*u still in the cone (inf if unbounded)."""
        alpha = np.inf
        if self.pos_idx.size:
            up = u[self.pos_idx]
            neg = up < 0.0
            if np.any(neg):
                alpha = min(
                    alpha,
                    float(np.min(-self.lam[self.pos_idx][neg] / up[neg])),
                )
        for state in self._soc:
            idx = state["idx"]
            L, U = state["lam"], u[idx]
            c = L[:, 0] ** 2 - np.sum(L[:, 1:] ** 2, axis=1)
            b = 2.0 * (L[:, 0] * U[:, 0] - np.sum(L[:, 1:] * U[:, 1:], axis=1))
            a = U[:, 0] ** 2 - np.sum(U[:, 1:] ** 2, axis=1)
            disc = b ** 2 - 4.0 * a * c
            has_root = (a < 0.0) | ((b < 0.0) & (disc >= 0.0))
            if np.any(has_root):
                denom = -b + np.sqrt(np.maximum(disc, 0.0))
                ok = has_root & (denom > 0.0)
                if np.any(ok):
                    alpha = min(alpha, float(np.min(2.0 * c[ok] / denom[ok])))
        if self._psd is not None:
            wL, QL = self._psd["wL"], self._psd["QL"]
            Linvh = _spectral_fn(wL, QL, lambda w: 1.0 / np.sqrt(w))
            U = smat3(u[self.psd_idx])
            M = Linvh @ U @ Linvh
            M = (M + np.swapaxes(M, -1, -2)) / 2.0
            m0 = eigvals3(M)[:, 0]
            neg = m0 < 0.0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-1.0 / m0[neg])))
        return alpha

    def project_into_cone(self, v):
        """Euclidean projection of the cone coordinates of v onto the cone.

        Free coordinates pass through.  Interior-point iterates end up within
        roundoff of the boundary, so this moves points by at most their tiny
        cone violation; it is used to polish returned solutions.
        """
        out = v.copy()
        if self.pos_idx.size:
            out[self.pos_idx] = np.maximum(v[self.pos_idx], 0.0)
        for _, idx in self.soc_groups:
            V = v[idx]
            nrm = np.linalg.norm(V[:, 1:], axis=1)
            below = V[:, 0] < nrm
            if np.any(below):
                t = np.maximum((V[:, 0] + nrm) / 2.0, 0.0)
                scale = np.where(nrm > 0.0, t / np.where(nrm > 0.0, nrm, 1.0), 0.0)
                newV = V.copy()
                newV[below, 0] = t[below]
                newV[below, 1:] = V[below, 1:] * scale[below, None]
                out[idx] = newV
        if self.psd_idx.shape[0]:
            M = smat3(v[self.psd_idx])
            w, Q = eigh3(M)
            neg = w.min(axis=1) < 0.0
            if np.any(neg):
                # rebuild only the violating blocks; feasible ones pass
                # through exactly (reconstruction is not error-free)
                proj = _spectral_fn(np.maximum(w[neg], 0.0), Q[neg], lambda z: z)
                out[self.psd_idx[neg]] = svec3(proj)
        return out

    # -- diagnostics --------------------------------------------------------

    def residual_in_cone(self, v, kind="primal") -> float:
        """Most negative cone margin of v (0 when v is in the cone).

        For nonnegative coordinates the margin is the coordinate itself, for
        quadratic cones v0 - |v1|, for PSD blocks the smallest eigenvalue.
        """
        worst = 0.0
        if self.pos_idx.size:
            worst = min(worst, float(np.min(v[self.pos_idx])))
        for _, idx in self.soc_groups:
            V = v[idx]
            margin = V[:, 0] - np.linalg.norm(V[:, 1:], axis=1)
            worst = min(worst, float(np.min(margin)))
        if self.psd_idx.shape[0]:
            V = smat3(v[self.psd_idx])
            # eigh3 (not the trigonometric values alone) because boundary
            # blocks with a clustered tiny pair need the fallback's accuracy
            w, _ = eigh3(V)
            worst = min(worst, float(np.min(w[:, 0])))
        return worst
