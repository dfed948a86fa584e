"""Batched eigendecomposition of symmetric 3x3 matrices.

Eigenvalues come from the trigonometric closed form for the characteristic
cubic; eigenvectors from cross products of rows of (A - w I).  Blocks where
that construction degenerates (clustered eigenvalues) fall back to a cyclic
Jacobi sweep, which is unconditionally robust on 3x3 input.  Everything is
vectorised over the leading axis, so no per-matrix LAPACK calls appear in the
solver's hot path.
"""

from __future__ import annotations

import numpy as np

_TWO_PI_3 = 2.0 * np.pi / 3.0


def _det3(B):
    return (
        B[..., 0, 0] * (B[..., 1, 1] * B[..., 2, 2] - B[..., 1, 2] * B[..., 2, 1])
        - B[..., 0, 1] * (B[..., 1, 0] * B[..., 2, 2] - B[..., 1, 2] * B[..., 2, 0])
        + B[..., 0, 2] * (B[..., 1, 0] * B[..., 2, 1] - B[..., 1, 1] * B[..., 2, 0])
    )


def eigvals3(A):
    """Eigenvalues of symmetric (..., 3, 3) input, ascending along the last axis."""
    A = np.asarray(A, dtype=float)
    a00, a11, a22 = A[..., 0, 0], A[..., 1, 1], A[..., 2, 2]
    a01, a02, a12 = A[..., 0, 1], A[..., 0, 2], A[..., 1, 2]

    q = (a00 + a11 + a22) / 3.0
    p1 = a01 ** 2 + a02 ** 2 + a12 ** 2
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))

    scale = np.max(np.abs(A), axis=(-2, -1))
    near_scalar = p <= 1e-14 * (scale + 1e-300)
    p_safe = np.where(near_scalar, 1.0, p)

    B = (A - q[..., None, None] * np.eye(3)) / p_safe[..., None, None]
    r = np.clip(_det3(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    w2 = q + 2.0 * p * np.cos(phi)
    w0 = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    w1 = 3.0 * q - w0 - w2

    w = np.stack([w0, w1, w2], axis=-1)
    return np.where(near_scalar[..., None], q[..., None], w)


def _jacobi3(A, sweeps=14):
    """Cyclic Jacobi on a batch of symmetric 3x3 matrices -> (w asc, V)."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    # the off-diagonal partner of pivot (p, q) is r
    for _ in range(sweeps):
        for p, q, r in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            apq = A[:, p, q]
            live = np.abs(apq) > 0.0
            app, aqq = A[:, p, p], A[:, q, q]
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                tau = np.where(
                    live, (aqq - app) / np.where(live, 2.0 * apq, 1.0), 0.0)
                sign = np.where(tau >= 0.0, 1.0, -1.0)
                at = np.abs(tau)
                big = at > 1e8  # 1 + tau^2 rounds to tau^2; use the asymptote
                t_small = sign / (at + np.sqrt(1.0 + np.where(big, 0.0, at) ** 2))
                t = np.where(big, sign / (2.0 * np.maximum(at, 1.0)), t_small)
            c = 1.0 / np.sqrt(1.0 + t ** 2)
            s = t * c
            c = np.where(live, c, 1.0)
            s = np.where(live, s, 0.0)
            t = np.where(live, t, 0.0)

            A[:, p, p] = app - t * apq
            A[:, q, q] = aqq + t * apq
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            arp, arq = A[:, r, p].copy(), A[:, r, q].copy()
            A[:, r, p] = c * arp - s * arq
            A[:, p, r] = A[:, r, p]
            A[:, r, q] = s * arp + c * arq
            A[:, q, r] = A[:, r, q]

            vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = c[:, None] * vp - s[:, None] * vq
            V[:, :, q] = s[:, None] * vp + c[:, None] * vq

    w = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], axis=-1)
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return w, V


def _unit_eigvec(A, w, scale):
    """Eigenvector candidates for one eigenvalue via row cross products.

    Returns (vectors, ok-mask); rows with no usable cross product are flagged.
    """
    C = A - w[:, None, None] * np.eye(3)
    r0, r1, r2 = C[:, 0, :], C[:, 1, :], C[:, 2, :]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=2)
    pick = np.argmax(norms, axis=1)
    idx = np.arange(A.shape[0])
    best = cands[idx, pick]
    bestn = norms[idx, pick]
    ok = bestn > 1e-10 * (scale ** 2 + 1e-300)
    v = best / np.where(ok, bestn, 1.0)[:, None]
    return v, ok


def eigh3(A):
    """Eigen-decomposition of symmetric (n, 3, 3) input.

    Returns ``(w, V)``: eigenvalues ascending, V[:, :, k] the unit eigenvector
    for w[:, k], with ``A = V diag(w) V^T`` to tight tolerance.
    """
    A = np.asarray(A, dtype=float)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    n = A.shape[0]
    w = eigvals3(A)
    scale = np.max(np.abs(A), axis=(-2, -1))

    v0, ok0 = _unit_eigvec(A, w[:, 0], scale)
    v2, ok2 = _unit_eigvec(A, w[:, 2], scale)
    # force orthogonality of the extreme pair, then complete the frame
    v2 = v2 - np.sum(v2 * v0, axis=1, keepdims=True) * v0
    n2 = np.linalg.norm(v2, axis=1)
    okn = n2 > 1e-8
    v2 = v2 / np.where(okn, n2, 1.0)[:, None]
    v1 = np.cross(v2, v0)

    V = np.stack([v0, v1, v2], axis=-1)
    resid = np.einsum("nik,nk,njk->nij", V, w, V) - A
    good = (
        ok0 & ok2 & okn
        & (np.max(np.abs(resid), axis=(-2, -1)) <= 1e-11 * (scale + 1.0))
    )

    bad = ~good
    if np.any(bad):
        wj, Vj = _jacobi3(A[bad])
        w = w.copy()
        w[bad] = wj
        V[bad] = Vj

    if squeeze:
        return w[0], V[0]
    return w, V
