"""Plane-stress material law and the convex gauges used by the design programs.

Symmetric 2x2 tensors are stored in orthonormal (Mandel) coordinates: a
tensor with components ``a11, a22, a12`` becomes the vector
``(a11, a22, sqrt(2)*a12)``, so the Euclidean dot product of two coordinate
vectors equals the Frobenius product of the matrices they represent.  All
gauge functions broadcast over leading axes: pass an ``(N, 3)`` array to
evaluate N tensors at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)

#: Relative tolerance used for PSD / range checks throughout the package.
PSD_TOL = 1e-10

#: Slack admitted by :func:`membership_C` on the unit gauge ball.  A true
#: verdict guarantees a constructive witness of the lifted feasibility
#: system within this slack, so the two tolerances are tied together.
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class Material:
    """An isotropic plane-stress material, or the degenerate Michell limit.

    ``H`` is the Hooke matrix in Mandel coordinates, ``L`` its lower
    triangular Cholesky factor and ``M = (L^-1)^T``, so ``H = L L^T`` and
    ``H^-1 = M M^T``.  In Michell mode (``nu is None``) the quadratic form
    degenerates and the three matrices are ``None``; the gauge becomes
    ``sqrt(E)`` times the spectral norm.

    ``c1_equiv`` is the largest constant with ``c1_equiv * rho_M <= rho``
    (it equals 1 for every admissible Poisson ratio).
    """

    E: float
    nu: float | None
    mode: str  # "isotropic" | "michell"
    H: np.ndarray | None
    L: np.ndarray | None
    M: np.ndarray | None
    c1_equiv: float


def build_material(E: float, nu) -> Material:
    """Build a :class:`Material` from Young modulus and Poisson ratio.

    Pass ``nu="michell"`` (or ``None``) for the degenerate limit in which
    the gauge is the scaled spectral norm.
    """
    E = float(E)
    if not E > 0.0:
        raise ValueError(f"Young modulus must be positive, got {E}")
    if nu is None or (isinstance(nu, str) and nu.lower() == "michell"):
        return Material(E=E, nu=None, mode="michell", H=None, L=None, M=None,
                        c1_equiv=1.0)
    nu = float(nu)
    if not -1.0 < nu < 1.0:
        raise ValueError(f"Poisson ratio must lie in (-1, 1), got {nu}")

    d = 1.0 - nu * nu
    H = E * np.array([
        [1.0 / d, nu / d, 0.0],
        [nu / d, 1.0 / d, 0.0],
        [0.0, 0.0, 1.0 / (1.0 + nu)],
    ])
    # Closed-form Cholesky factor of H and M = (L^-1)^T.
    sE = np.sqrt(E)
    L = sE * np.array([
        [1.0 / np.sqrt(d), 0.0, 0.0],
        [nu / np.sqrt(d), 1.0, 0.0],
        [0.0, 0.0, 1.0 / np.sqrt(1.0 + nu)],
    ])
    M = (1.0 / sE) * np.array([
        [np.sqrt(d), -nu, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, np.sqrt(1.0 + nu)],
    ])
    # Minimize rho over the unit sphere of the spectral norm: with
    # eigenvalues (1, t), |t| <= 1, the square of the ratio is
    # (1 + t^2 + 2 nu t) / (1 - nu^2), minimal at t = clip(-nu, -1, 1).
    t = np.clip(-nu, -1.0, 1.0)
    c1 = np.sqrt((1.0 + t * t + 2.0 * nu * t) / d)
    return Material(E=E, nu=nu, mode="isotropic", H=H, L=L, M=M,
                    c1_equiv=float(c1))


# ---------------------------------------------------------------------------
# small tensor helpers (Mandel coordinates)
# ---------------------------------------------------------------------------

def eigvals_2d(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ordered eigenvalues (larger first) of symmetric tensors in coords."""
    coords = np.asarray(coords, dtype=float)
    a, b, t = coords[..., 0], coords[..., 1], coords[..., 2]
    mean = 0.5 * (a + b)
    rad = 0.5 * np.sqrt((a - b) ** 2 + 2.0 * t * t)
    return mean + rad, mean - rad


def principal_axes(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues and orthonormal eigenvectors ``lam1 >= lam2, v1, v2``.

    For (numerically) isotropic tensors the canonical axes ``e1, e2`` are
    returned.  ``v2`` is ``v1`` rotated by +90 degrees.
    """
    coords = np.asarray(coords, dtype=float)
    lam1, lam2 = eigvals_2d(coords)
    a, b, t = coords[..., 0], coords[..., 1], coords[..., 2]
    c = t / SQRT2  # off-diagonal matrix entry
    # Two analytic eigenvector candidates for lam1; pick the better
    # conditioned one, falling back to e1 at isotropic points.
    cand1 = np.stack([c, lam1 - a], axis=-1)
    cand2 = np.stack([lam1 - b, c], axis=-1)
    n1 = np.linalg.norm(cand1, axis=-1)
    n2 = np.linalg.norm(cand2, axis=-1)
    v = np.where((n1 >= n2)[..., None], cand1, cand2)
    nv = np.linalg.norm(v, axis=-1)
    scale = np.maximum(np.abs(lam1), np.abs(lam2))
    tie = nv <= 1e-14 * np.maximum(1.0, scale)
    e1 = np.zeros_like(v)
    e1[..., 0] = 1.0
    v = np.where(tie[..., None], e1, v / np.where(nv > 0.0, nv, 1.0)[..., None])
    v_perp = np.stack([-v[..., 1], v[..., 0]], axis=-1)
    return lam1, lam2, v, v_perp


def outer_coords(v: np.ndarray) -> np.ndarray:
    """Mandel coordinates of the symmetric outer product ``v (x) v``."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 0] ** 2, v[..., 1] ** 2,
                     SQRT2 * v[..., 0] * v[..., 1]], axis=-1)


def _quad_form(Q: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", coords, Q, coords)


def _hinv(mat: Material) -> np.ndarray:
    return mat.M @ mat.M.T


# ---------------------------------------------------------------------------
# gauges
# ---------------------------------------------------------------------------

def rho(mat: Material, xi: np.ndarray) -> np.ndarray:
    """Energy gauge: ``sqrt(<H xi, xi>)``, or ``sqrt(E) * |xi|_spec``."""
    xi = np.asarray(xi, dtype=float)
    if mat.mode == "michell":
        lam1, lam2 = eigvals_2d(xi)
        return np.sqrt(mat.E) * np.maximum(np.abs(lam1), np.abs(lam2))
    return np.sqrt(np.maximum(_quad_form(mat.H, xi), 0.0))


def rho_polar(mat: Material, sigma: np.ndarray) -> np.ndarray:
    """Polar (dual) gauge: ``sqrt(<H^-1 s, s>)``, or nuclear norm over sqrt(E)."""
    sigma = np.asarray(sigma, dtype=float)
    if mat.mode == "michell":
        lam1, lam2 = eigvals_2d(sigma)
        return (np.abs(lam1) + np.abs(lam2)) / np.sqrt(mat.E)
    return np.sqrt(np.maximum(_quad_form(_hinv(mat), sigma), 0.0))


def _case_masks(mat: Material, lam1, lam2):
    """Region masks of the relaxed isotropic energy (wrinkling regimes)."""
    nu = mat.nu
    slack = -(1.0 - nu) / (1.0 + nu) * (lam1 - lam2) + (lam1 + lam2)
    taut = slack >= 0.0                      # full-contact: quadratic branch
    void = lam1 <= 0.0                       # negative semi-definite strain
    wrinkled = ~taut & ~void                 # uniaxial branch
    return taut, wrinkled, void


def rho_plus(mat: Material, xi: np.ndarray) -> np.ndarray:
    """Gauge of the relaxed (rank-one convexified) membrane energy.

    Equals ``sqrt(2 j+ (xi))`` where ``j+`` is the relaxation of the
    quadratic energy over nonnegative wrinkling strains.
    """
    xi = np.asarray(xi, dtype=float)
    lam1, lam2 = eigvals_2d(xi)
    if mat.mode == "michell":
        return np.sqrt(mat.E) * np.maximum(lam1, 0.0)
    taut, wrinkled, _ = _case_masks(mat, lam1, lam2)
    out = np.zeros(np.broadcast_shapes(lam1.shape), dtype=float)
    full = rho(mat, xi)
    out = np.where(taut, full, out)
    out = np.where(wrinkled, np.sqrt(mat.E) * np.maximum(lam1, 0.0), out)
    return out if out.shape else float(out)


def relaxed_stress(mat: Material, xi: np.ndarray) -> np.ndarray:
    """Stress ``sigma = d j+ (xi)`` of the relaxed isotropic energy.

    On the uniaxial branch the stress is rank one along the major principal
    direction; on the slack branch it vanishes.  The Michell-limit energy is
    not differentiable, so ``mode="michell"`` is unsupported.
    """
    if mat.mode == "michell":
        raise NotImplementedError(
            "relaxed_stress is single-valued only for isotropic materials")
    xi = np.asarray(xi, dtype=float)
    lam1, lam2, v1, _ = principal_axes(xi)
    taut, wrinkled, _ = _case_masks(mat, lam1, lam2)
    sig = np.zeros(np.broadcast_shapes(xi.shape), dtype=float)
    sig = np.where(taut[..., None], xi @ mat.H.T, sig)
    uni = (mat.E * np.maximum(lam1, 0.0))[..., None] * outer_coords(v1)
    sig = np.where(wrinkled[..., None], uni, sig)
    return sig


def varrho_polar(mat: Material, sigma: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Extended polar gauge ``rho0(sigma) + <sigma^+ q, q>/2``.

    Finite only when ``sigma`` is positive semi-definite and ``q`` lies in
    its range (both checked to relative tolerance ``PSD_TOL``); returns
    ``inf`` otherwise.  The inverse is the Moore-Penrose pseudo-inverse.
    """
    sigma = np.asarray(sigma, dtype=float)
    q = np.asarray(q, dtype=float)
    lam1, lam2, v1, v2 = principal_axes(sigma)
    scale = np.maximum(1.0, np.abs(lam1))
    qnorm = np.linalg.norm(q, axis=-1)
    q1 = np.einsum("...i,...i->...", q, v1)
    q2 = np.einsum("...i,...i->...", q, v2)

    bad = lam2 < -PSD_TOL * scale
    quad = np.zeros_like(lam1)
    for lam, qc in ((lam1, q1), (lam2, q2)):
        pos = lam > PSD_TOL * scale
        quad = quad + np.where(pos, qc * qc / np.where(pos, lam, 1.0), 0.0)
        # zero eigenvalue: q must have no component in that direction
        bad = bad | (~pos & (np.abs(qc) > PSD_TOL * (1.0 + qnorm)))

    val = rho_polar(mat, sigma) + 0.5 * quad
    out = np.where(bad, np.inf, val)
    return out if out.shape else float(out)


def schur_psd_check(sigma: np.ndarray, q: np.ndarray, c: np.ndarray,
                    tol: float = PSD_TOL) -> np.ndarray:
    """True iff the 3x3 block matrix ``[[sigma, q/sqrt2], [q^T/sqrt2, c]]`` is PSD.

    This is the matrix whose Schur complement condition reads
    ``sigma PSD, q in range(sigma), c >= <sigma^+ q, q>/2``.
    """
    sigma = np.asarray(sigma, dtype=float)
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    shape = np.broadcast_shapes(sigma.shape[:-1], q.shape[:-1], c.shape)
    A = np.zeros(shape + (3, 3))
    A[..., 0, 0] = sigma[..., 0]
    A[..., 1, 1] = sigma[..., 1]
    A[..., 0, 1] = A[..., 1, 0] = sigma[..., 2] / SQRT2
    A[..., 0, 2] = A[..., 2, 0] = q[..., 0] / SQRT2
    A[..., 1, 2] = A[..., 2, 1] = q[..., 1] / SQRT2
    A[..., 2, 2] = c
    ev = np.linalg.eigvalsh(A)
    ok = ev[..., 0] >= -tol * np.maximum(1.0, ev[..., -1])
    return ok if ok.shape else bool(ok)


def membership_C(mat: Material, xi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """True iff ``rho_plus(theta (x) theta / 2 + xi) <= 1`` (tiny slack).

    This is membership in the convex local-constraint set of the
    displacement pair programs.
    """
    xi = np.asarray(xi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    val = rho_plus(mat, xi + 0.5 * outer_coords(theta))
    ok = np.asarray(val) <= 1.0 + MEMBERSHIP_TOL
    return ok if ok.shape else bool(ok)
