"""Grid-restricted string networks as an upper-bounding design scheme.

Instead of a diffused membrane, the structure is sought as a system of
straight strings connecting nodes of a regular grid: each candidate pair
carries an axial tensile force ``Pi >= 0`` and a transverse force ``pi``,
and costs ``length * (Pi + pi^2 / (2 Pi))``.  Restricting string endpoints
to the grid shrinks the feasible set of the force-based formulation, so the
optimal value bounds the membrane optimum from above — the finite-element
value bounds it from below, sandwiching the continuum value between two
computable numbers.

The grid is carried by a :class:`~memopt.geometry.Mesh`: only its vertices
and interior/boundary classification are used here (the triangulation plays
no role), which keeps one structured-grid concept across both schemes and
reuses the exact nodal load assembly.  Only finitely supported loads are
meaningful for string systems; distributed loads are lumped onto the nodes
with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from memopt.conic import ConeBlock, ConeProgram, solve as conic_solve
from memopt.geometry import Mesh, PointLoad, nodal_load_vector

SQRT2 = np.sqrt(2.0)

#: Strings with ``Pi`` below this fraction of the largest axial force are
#: dropped from exports (they carry no material).
PRUNE_REL_TOL = 1e-10

#: An unfiltered all-pairs candidate set above this size must be narrowed
#: with ``max_length`` before assembly is attempted.
MAX_PAIRS = 10_000_000

#: Variables per candidate pair: (Pi, t, pi) and the 3-vector cone copy.
PAIR_STRIDE = 6

CSV_COLUMNS = ("x1", "y1", "x2", "y2", "Pi", "pi", "mu_density")


def build_pairs(grid: Mesh, max_length: float | None = None,
                max_pairs: int = MAX_PAIRS) -> np.ndarray:
    """Enumerate unordered candidate node pairs ``(i, j)`` with ``i > j``.

    ``max_length`` keeps only pairs no farther apart than that (the grid's
    ``h`` — its diagonal pitch — keeps exactly the axis and diagonal
    neighbours).  Unfiltered enumeration refuses to build candidate sets
    larger than ``max_pairs``; pass ``max_length`` instead.
    """
    n_nodes = grid.vertices.shape[0]
    if max_length is None:
        count = n_nodes * (n_nodes - 1) // 2
        if count > max_pairs:
            raise ValueError(
                f"all-pairs candidate set has {count} pairs, over the "
                f"{max_pairs} budget; restrict it with max_length")
        j, i = np.triu_indices(n_nodes, k=1)
        return np.column_stack([i, j]).astype(np.int64)

    # enumerate by integer offsets on the (n+1)x(n+1) lattice: every
    # unordered pair appears once under (di > 0) or (di == 0, dj > 0)
    m = grid.n
    s = grid.a / m
    reach = int(np.floor(float(max_length) / s + 1e-12))
    if reach <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    offsets = []
    for di in range(0, reach + 1):
        for dj in range(-reach, reach + 1):
            if di == 0 and dj <= 0:
                continue
            if np.hypot(di * s, dj * s) <= float(max_length) * (1 + 1e-12):
                offsets.append((di, dj))
    ii, jj = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="xy")
    ii = ii.ravel()
    jj = jj.ravel()
    chunks = []
    for di, dj in offsets:
        ok = (ii + di <= m) & (jj + dj >= 0) & (jj + dj <= m)
        a = (jj[ok] + dj) * (m + 1) + (ii[ok] + di)
        b = jj[ok] * (m + 1) + ii[ok]
        chunks.append(np.column_stack([a, b]))
    pairs = (np.concatenate(chunks, axis=0) if chunks
             else np.zeros((0, 2), dtype=np.int64))
    # downward diagonals come out low-id-first; canonicalize to i > j
    pairs = np.column_stack([pairs.max(axis=1), pairs.min(axis=1)])
    if pairs.shape[0] > max_pairs:
        raise ValueError(
            f"filtered candidate set has {pairs.shape[0]} pairs, over the "
            f"{max_pairs} budget; lower max_length")
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order].astype(np.int64)


def nodal_string_loads(grid: Mesh, loads) -> np.ndarray:
    """Nodal weights of ``loads`` on the grid (full vector, all vertices).

    Point loads are exact; line and pressure loads are only *lumped* onto
    the nodes — a string system cannot carry a distributed load directly,
    so this is an approximation and a warning says so.
    """
    if isinstance(loads, PointLoad):
        loads = [loads]
    loads = list(loads)
    if any(not isinstance(ld, PointLoad) for ld in loads):
        warnings.warn(
            "string systems carry finitely supported loads; distributed "
            "loads were lumped onto the grid nodes", stacklevel=2)
    return nodal_load_vector(grid, loads, all_vertices=True)


def assemble_string_program(grid: Mesh, pairs: np.ndarray, f: np.ndarray,
                            V0: float = 1.0) -> ConeProgram:
    """Build the conic program over candidate strings for nodal loads ``f``.

    Per pair ``k`` the variables are ``(Pi_k, t_k, pi_k)`` plus a quadratic
    cone copy ``(Pi_k + t_k, Pi_k - t_k, sqrt2 * pi_k)`` enforcing
    ``2 Pi_k t_k >= pi_k^2`` with ``Pi_k, t_k >= 0``.  The objective is
    ``sum_k length_k * (Pi_k + t_k)``.  Every interior node contributes two
    in-plane balance rows and one transverse row carrying its load weight;
    boundary nodes are supported and contribute none.
    """
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be a (K, 2) integer array")
    f = np.asarray(f, dtype=float)
    n_nodes = grid.vertices.shape[0]
    if f.shape != (n_nodes,):
        raise ValueError(
            f"f must have one weight per grid node, shape ({n_nodes},)")
    if not np.all(np.isfinite(f)):
        raise ValueError("load vector contains non-finite entries")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_nodes):
        raise ValueError("pair indices out of range")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise ValueError("pairs must connect distinct nodes")

    K = pairs.shape[0]
    n_int = grid.n_interior
    int_col = grid.interior_index  # node id -> interior position, -1 outside

    # a loaded interior node with no incident candidate string cannot be
    # balanced by any (Pi, pi); refuse at assembly
    incidence = np.zeros(n_nodes, dtype=np.int64)
    if K:
        np.add.at(incidence, pairs[:, 0], 1)
        np.add.at(incidence, pairs[:, 1], 1)
    loaded = (np.abs(f) > 0.0) & (int_col >= 0)
    orphans = np.flatnonzero(loaded & (incidence == 0))
    if orphans.size:
        raise ValueError(
            f"nodes {orphans.tolist()} carry load but no candidate string "
            "reaches them (infeasible at assembly; extend the pair set)")

    ends = grid.vertices[pairs[:, 0]] - grid.vertices[pairs[:, 1]]
    lengths = np.hypot(ends[:, 0], ends[:, 1])
    tau = ends / lengths[:, None]

    n_vars = PAIR_STRIDE * K
    n_rows = 3 * n_int + 3 * K

    c = np.zeros(n_vars)
    vb = PAIR_STRIDE * np.arange(K)
    c[vb + 0] = lengths
    c[vb + 1] = lengths

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def put(r, cix, v):
        rows.append(np.asarray(r, dtype=np.int64))
        cols.append(np.asarray(cix, dtype=np.int64))
        vals.append(np.asarray(v, dtype=float))

    # balance rows: +tau at the first endpoint, -tau at the second
    for end, sign in ((0, 1.0), (1, -1.0)):
        node = pairs[:, end]
        keep = int_col[node] >= 0
        r = int_col[node[keep]]
        kk = np.flatnonzero(keep)
        put(r, vb[kk] + 0, sign * tau[kk, 0])
        put(n_int + r, vb[kk] + 0, sign * tau[kk, 1])
        put(2 * n_int + r, vb[kk] + 2, sign * np.ones(kk.size))

    # cone copy coupling: v - (Pi + t, Pi - t, sqrt2 pi) = 0
    rb = 3 * n_int + 3 * np.arange(K)
    ones = np.ones(K)
    put(rb, vb + 3, ones)
    put(rb, vb + 0, -ones)
    put(rb, vb + 1, -ones)
    put(rb + 1, vb + 4, ones)
    put(rb + 1, vb + 0, -ones)
    put(rb + 1, vb + 1, ones)
    put(rb + 2, vb + 5, ones)
    put(rb + 2, vb + 2, -SQRT2 * ones)

    A = sp.coo_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
          np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
        shape=(n_rows, n_vars)).tocsr()

    b = np.zeros(n_rows)
    b[2 * n_int:3 * n_int] = f[grid.interior_vertices]

    cones = [ConeBlock("free", 3), ConeBlock("quad", 3)] * K

    labels = {
        "kind": "string-dual",
        "grid": grid,
        "pairs": pairs,
        "lengths": lengths,
        "tau": tau,
        "V0": float(V0),
        "n_pairs": K,
        "stride": PAIR_STRIDE,
        "rows": {
            "balance_x": (0, n_int),
            "balance_y": (n_int, 2 * n_int),
            "transverse": (2 * n_int, 3 * n_int),
            "coupling": (3 * n_int, n_rows),
        },
    }
    prog = ConeProgram(c=c, A=A, b=b, cones=cones, labels=labels)
    prog.validate()
    return prog


@dataclass(frozen=True)
class StringSystem:
    """A solved string network on a grid.

    ``Pi`` and ``pi`` are the axial and transverse forces per candidate
    pair, ``mu`` the per-length mass density ``(2 V0 / Z) * Pi`` of the
    optimally scaled design.  All candidate pairs are kept here; exports
    prune the force-free ones.
    """

    grid: Mesh
    pairs: np.ndarray      # (K, 2) node ids
    lengths: np.ndarray    # (K,)
    tau: np.ndarray        # (K, 2) unit directions, node0 - node1
    Pi: np.ndarray         # (K,) axial forces
    pi: np.ndarray         # (K,) transverse forces
    Z_strings: float
    V0: float
    mu: np.ndarray         # (K,) mass per unit length
    status: str
    rel_gap: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"

    def surviving(self) -> np.ndarray:
        """Indices of strings that carry material (Pi above the prune cut)."""
        if self.Pi.size == 0:
            return np.zeros(0, dtype=np.int64)
        top = float(self.Pi.max())
        if top <= 0.0:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.Pi >= PRUNE_REL_TOL * top)


def solve_strings(prog: ConeProgram, **solver_options) -> StringSystem:
    """Solve an assembled string program and package the network.

    A zero transverse load is resolved exactly without iterating: the cost
    is nonnegative and the all-zero force field is feasible, so the empty
    network is optimal.  (For any *nonzero* load the optimally scaled mass
    density is invariant under load scaling, so there is no continuous
    limit to take — the load-free design is genuinely a special point.)
    """
    labels = prog.labels or {}
    if labels.get("kind") != "string-dual":
        raise ValueError("program was not assembled by assemble_string_program")
    K = labels["n_pairs"]
    V0 = labels["V0"]
    zeros = np.zeros(K)
    if not np.any(prog.b):
        return StringSystem(
            grid=labels["grid"], pairs=labels["pairs"],
            lengths=labels["lengths"], tau=labels["tau"],
            Pi=zeros, pi=zeros.copy(), Z_strings=0.0, V0=V0,
            mu=zeros.copy(), status="Optimal", rel_gap=0.0, iterations=0)
    sol = conic_solve(prog, **solver_options)

    stride = labels["stride"]
    vb = stride * np.arange(K)
    Pi = sol.x[vb + 0].copy()
    pi = sol.x[vb + 2].copy()
    if sol.status == "Optimal":
        Z = float(prog.c @ sol.x)
        mu = (2.0 * V0 / Z) * Pi if Z > 0.0 else zeros
    else:
        Z = float("nan")
        mu = np.full(K, np.nan)
    return StringSystem(
        grid=labels["grid"], pairs=labels["pairs"],
        lengths=labels["lengths"], tau=labels["tau"],
        Pi=Pi, pi=pi, Z_strings=Z, V0=V0, mu=mu,
        status=sol.status, rel_gap=sol.rel_gap, iterations=sol.iterations)


def write_strings_csv(system: StringSystem, path) -> None:
    """Write surviving strings as ``x1,y1,x2,y2,Pi,pi,mu_density`` rows."""
    keep = system.surviving()
    p0 = system.grid.vertices[system.pairs[keep, 0]]
    p1 = system.grid.vertices[system.pairs[keep, 1]]

    def num(v):
        return repr(float(v))

    lines = [",".join(CSV_COLUMNS)]
    for r in range(keep.size):
        k = keep[r]
        lines.append(",".join([
            num(p0[r, 0]), num(p0[r, 1]), num(p1[r, 0]), num(p1[r, 1]),
            num(system.Pi[k]), num(system.pi[k]), num(system.mu[k]),
        ]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
