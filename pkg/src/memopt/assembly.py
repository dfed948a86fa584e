"""Assembly of the discrete dual membrane program.

The design unknowns live per element: a scalar gauge bound ``r0``, and a
symmetric 3x3 stress block ``tau`` stored in scaled-vector coordinates
(off-diagonal entries carry a factor sqrt(2) so the 6-vector dot product
equals the matrix Frobenius product).  The in-plane 2x2 part of ``tau`` is
the area-integrated membrane stress, the (1,3)/(2,3) entries carry the
transverse shear resultant, and ``tau33`` accumulates the transverse
energy term.  Equilibrium couples elements through the interior-vertex
hat functions; boundary vertices are fixed and contribute no columns.

Everything is built in one deterministic vectorized pass; the resulting
:class:`~memopt.conic.ConeProgram` is immutable.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import ConeBlock, ConeProgram
from .geometry import Mesh, nodal_load_vector
from .material import Material

SQRT2 = np.sqrt(2.0)

#: Number of variables attached to each element.
VAR_STRIDE = 11

#: Per-element variable symbols, in storage order.  ``t12``/``t13``/``t23``
#: are scaled-vector slots and hold sqrt(2) times the matrix entry; the
#: (1,3) and (2,3) slots therefore equal the transverse shear components
#: q1, q2 exactly.  ``aux0..aux3`` are the gauge-cone copies.
SYMBOLS = ("r0", "t11", "t22", "t33", "t12", "t13", "t23",
           "aux0", "aux1", "aux2", "aux3")

_OFFSET = {sym: k for k, sym in enumerate(SYMBOLS)}


class VariableLayout(Mapping):
    """Mapping from ``(element, symbol)`` to a flat variable index.

    Indices are computed on demand from the fixed per-element stride, so
    the object stays O(1) in memory regardless of mesh size.
    """

    def __init__(self, n_elements: int):
        self.n_elements = int(n_elements)

    def __getitem__(self, key):
        elem, sym = key
        elem = int(elem)
        if not 0 <= elem < self.n_elements or sym not in _OFFSET:
            raise KeyError(key)
        return VAR_STRIDE * elem + _OFFSET[sym]

    def __iter__(self):
        for elem in range(self.n_elements):
            for sym in SYMBOLS:
                yield (elem, sym)

    def __len__(self) -> int:
        return self.n_elements * len(SYMBOLS)

    @property
    def n_vars(self) -> int:
        return VAR_STRIDE * self.n_elements

    def slots(self, sym: str) -> np.ndarray:
        """All elements' indices for one symbol, as an array."""
        return VAR_STRIDE * np.arange(self.n_elements) + _OFFSET[sym]

    def tau_slice(self, elem: int) -> slice:
        """The six scaled-vector stress slots of one element."""
        base = VAR_STRIDE * int(elem)
        return slice(base + 1, base + 7)


@dataclass(frozen=True)
class GeometricOperators:
    """Constant-gradient element operators of the hat-function basis.

    Each matrix has one row per element and one column per interior
    vertex.  Products with nodal vectors return exact per-element
    derivatives: ``B11 @ u1`` is the 11-strain, ``B22 @ u2`` the
    22-strain, ``B12_1 @ u1 + B12_2 @ u2`` the scaled-vector shear slot
    (sqrt(2) times the tensor entry), and ``(D1 @ w, D2 @ w)`` the
    deflection gradient.
    """

    B11: sp.csr_matrix
    B22: sp.csr_matrix
    B12_1: sp.csr_matrix
    B12_2: sp.csr_matrix
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    f: np.ndarray | None = None

    def strain(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """Per-element in-plane strain in scaled-vector coordinates."""
        return np.column_stack([
            self.B11 @ u1,
            self.B22 @ u2,
            self.B12_1 @ u1 + self.B12_2 @ u2,
        ])

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Per-element deflection gradient (n_elements, 2)."""
        return np.column_stack([self.D1 @ w, self.D2 @ w])


def _element_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Hat-function gradients and interior-column ids per element.

    Returns ``(grads, cols)`` with shapes (n_elements, 3, 2) and
    (n_elements, 3); ``grads[e, k]`` is the gradient of the hat of local
    vertex ``k`` on element ``e`` and ``cols[e, k]`` its interior column
    (-1 for boundary vertices).
    """
    p = mesh.vertices[mesh.elements]
    # Gradient of hat k: the opposite edge rotated by 90 degrees, over 2A.
    edges = p[:, [2, 0, 1], :] - p[:, [1, 2, 0], :]
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)
    grads /= (2.0 * mesh.areas)[:, None, None]
    cols = mesh.interior_index[mesh.elements]
    return grads, cols


def geometric_operators(mesh: Mesh) -> GeometricOperators:
    """Build the six sparse element/vertex derivative matrices."""
    grads, cols = _element_gradients(mesh)
    ne, m = mesh.n_elements, mesh.n_interior
    mask = cols >= 0
    rows = np.broadcast_to(np.arange(ne)[:, None], (ne, 3))[mask]
    ccol = cols[mask]
    g1 = grads[..., 0][mask]
    g2 = grads[..., 1][mask]

    def tri(data: np.ndarray) -> sp.csr_matrix:
        return sp.coo_matrix((data, (rows, ccol)), shape=(ne, m)).tocsr()

    return GeometricOperators(B11=tri(g1), B22=tri(g2),
                              B12_1=tri(g2 / SQRT2), B12_2=tri(g1 / SQRT2),
                              D1=tri(g1), D2=tri(g2))


def assemble_dual_program(mesh: Mesh, material: Material, f: np.ndarray,
                          V0: float = 1.0) -> ConeProgram:
    """Assemble the stress-side conic program for a loaded membrane.

    Variables per element ``i`` (stride 11): ``r0_i`` free, the six
    scaled-vector slots of ``tau_i`` in a 3x3 semidefinite block, and a
    four-slot auxiliary copy enforcing the material gauge bound
    ``rho0(sigma_i) <= r0_i`` through quadratic cones.  The objective
    sums ``r0_i + tau33_i``.  Equality rows come in three vertex blocks
    (two in-plane equilibrium blocks and the transverse block carrying
    the load vector ``f``) followed by four gauge-coupling rows per
    element.  The multipliers of the three vertex blocks are the nodal
    fields (u1, u2, w).

    ``V0`` (the material volume used later for thickness scaling) does
    not enter the program; it is carried in the labels.
    """
    m = mesh.n_interior
    ne = mesh.n_elements
    f = np.asarray(f, dtype=float)
    if f.shape != (m,):
        raise ValueError(f"load vector must have shape ({m},), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("load vector must be finite")
    if m == 0 and np.any(f != 0.0):
        raise ValueError("mesh has no interior vertices; a nonzero load "
                         "cannot be equilibrated (infeasible at assembly)")

    n_vars = VAR_STRIDE * ne
    n_rows = 3 * m + 4 * ne
    layout = VariableLayout(ne)

    c = np.zeros(n_vars)
    c[layout.slots("r0")] = 1.0
    c[layout.slots("t33")] = 1.0

    grads, cols = _element_gradients(mesh)
    mask = cols >= 0
    elem_of = np.broadcast_to(np.arange(ne)[:, None], (ne, 3))[mask]
    vb = VAR_STRIDE * elem_of
    ccol = cols[mask]
    g1 = grads[..., 0][mask]
    g2 = grads[..., 1][mask]

    rows_list: list[np.ndarray] = []
    cols_list: list[np.ndarray] = []
    vals_list: list[np.ndarray] = []

    def put(r, cidx, v):
        rows_list.append(np.asarray(r, dtype=np.int64))
        cols_list.append(np.asarray(cidx, dtype=np.int64))
        vals_list.append(np.asarray(v, dtype=float))

    # In-plane equilibrium, direction 1: d1(s11) + d2(s12) rows.
    put(ccol, vb + 1, g1)
    put(ccol, vb + 4, g2 / SQRT2)
    # In-plane equilibrium, direction 2: d1(s12) + d2(s22) rows.
    put(m + ccol, vb + 4, g1 / SQRT2)
    put(m + ccol, vb + 2, g2)
    # Transverse equilibrium: d1(q1) + d2(q2) = f rows.
    put(2 * m + ccol, vb + 5, g1)
    put(2 * m + ccol, vb + 6, g2)

    # Gauge-coupling rows, four per element.
    ve = VAR_STRIDE * np.arange(ne)
    rb = 3 * m + 4 * np.arange(ne)
    ones = np.ones(ne)
    sE = np.sqrt(material.E)
    if material.mode == "isotropic":
        # aux = Mt @ (r0, t11, t22, sqrt(2) t12) with Mt the transposed
        # inverse Cholesky factor of the Hooke matrix (and a leading 1).
        Mt = material.M.T
        put(rb, ve + 7, ones)
        put(rb, ve + 0, -ones)
        put(rb + 1, ve + 8, ones)
        put(rb + 1, ve + 1, -Mt[0, 0] * ones)
        put(rb + 2, ve + 9, ones)
        put(rb + 2, ve + 1, -Mt[1, 0] * ones)
        put(rb + 2, ve + 2, -Mt[1, 1] * ones)
        put(rb + 3, ve + 10, ones)
        put(rb + 3, ve + 4, -Mt[2, 2] * ones)
        template = [ConeBlock("free", 1), ConeBlock("psd3", 6),
                    ConeBlock("quad", 4)]
    elif material.mode == "michell":
        # Trace bound sqrt(E) r0 >= t11 + t22 as a one-dimensional cone
        # (the semidefinite block keeps the trace nonnegative), plus the
        # deviatoric bound sqrt(E) r0 >= |(t11 - t22, sqrt(2) t12)|.
        put(rb, ve + 7, ones)
        put(rb, ve + 0, -sE * ones)
        put(rb, ve + 1, ones)
        put(rb, ve + 2, ones)
        put(rb + 1, ve + 8, ones)
        put(rb + 1, ve + 0, -sE * ones)
        put(rb + 2, ve + 9, ones)
        put(rb + 2, ve + 1, -ones)
        put(rb + 2, ve + 2, ones)
        put(rb + 3, ve + 10, ones)
        put(rb + 3, ve + 4, -ones)
        template = [ConeBlock("free", 1), ConeBlock("psd3", 6),
                    ConeBlock("quad", 1), ConeBlock("quad", 3)]
    else:  # pragma: no cover - Material constructor rejects other modes
        raise ValueError(f"unsupported material mode: {material.mode}")

    A = sp.coo_matrix(
        (np.concatenate(vals_list),
         (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(n_rows, n_vars)).tocsr()

    b = np.zeros(n_rows)
    b[2 * m:3 * m] = f

    cones = template * ne
    labels = {
        "kind": "membrane-dual",
        "mode": material.mode,
        "material": material,
        "V0": float(V0),
        "n_elements": ne,
        "n_interior": m,
        "stride": VAR_STRIDE,
        "vars": layout,
        "rows": {"u1": (0, m), "u2": (m, 2 * m), "w": (2 * m, 3 * m),
                 "coupling": (3 * m, n_rows)},
    }
    prog = ConeProgram(c=c, A=A, b=b, cones=cones, labels=labels)
    prog.validate()
    return prog


def build_membrane_program(mesh: Mesh, material: Material, loads,
                           V0: float = 1.0) -> ConeProgram:
    """Integrate the loads against the hat basis and assemble.

    Raises ``ValueError`` when the mesh has no interior vertices but the
    load is not identically zero: no finite-element field can carry it,
    so the paired displacement problem is infeasible already here.
    """
    if mesh.n_interior == 0:
        full = nodal_load_vector(mesh, loads, all_vertices=True)
        if np.any(full != 0.0):
            raise ValueError(
                "mesh has no interior vertices; the load cannot be "
                "carried (infeasible at assembly; refine the mesh)")
    f = nodal_load_vector(mesh, loads)
    return assemble_dual_program(mesh, material, f, V0=V0)


def dump_program(prog: ConeProgram, path) -> None:
    """Write a plain-text triplet dump for cross-solver validation.

    Format: a header line ``n_vars n_rows nnz n_cones``, then one line
    per nonzero of the objective (``c idx value``), the equality matrix
    (``A row col value``, row-major), the right-hand side
    (``b idx value``), and finally the cone table (``K kind dim``).
    """
    A = prog.A.tocoo()
    order = np.lexsort((A.col, A.row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{prog.n_vars} {prog.n_rows} {A.nnz} {len(prog.cones)}\n")
        for i in np.flatnonzero(prog.c):
            fh.write(f"c {i} {prog.c[i]:.17g}\n")
        for r, cc, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"A {r} {cc} {v:.17g}\n")
        for i in np.flatnonzero(prog.b):
            fh.write(f"b {i} {prog.b[i]:.17g}\n")
        for blk in prog.cones:
            fh.write(f"K {blk.kind} {blk.dim}\n")
