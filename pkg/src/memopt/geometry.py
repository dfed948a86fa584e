"""Structured triangulations of the square design domain and load assembly.

The mesh is the n-by-n grid of square cells over ``[0, a]^2``, each cell cut
into two right triangles.  Two diagonal layouts are supported:

* ``"uniform-senw"`` — every cell is cut along its SE-NW diagonal (parallel
  to the domain anti-diagonal), so refining n -> k*n nests the elements;
* ``"quadrant-symmetric"`` — the diagonal direction flips between domain
  quadrants, making the mesh symmetric about both centerlines (for odd n
  the centerline rows/columns keep the SE-NW cut).

Elements are numbered cell-by-cell, left-to-right then bottom-to-top, lower
triangle first, so the two triangles of a cell are adjacent — the layout the
thickness post-processing relies on when averaging checkerboard pairs.

Load functionals are integrated exactly against the P1 hat basis: point
loads by barycentric interpolation (with vertex snapping), line loads by
segment subdivision at all grid/diagonal lines, pressure loads by polygon
clipping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

PATTERNS = ("uniform-senw", "quadrant-symmetric")

#: Point loads closer than this fraction of the mesh size to a vertex snap to it.
SNAP_FRACTION = 0.1


def _cross2(u, v):
    """z-component of the cross product of stacked 2-vectors."""
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(frozen=True)
class Mesh:
    a: float
    n: int
    pattern: str
    vertices: np.ndarray          # ((n+1)^2, 2)
    elements: np.ndarray          # (n_elem, 3) vertex ids, counterclockwise
    areas: np.ndarray             # (n_elem,)
    cell_id: np.ndarray           # (n_elem,) grid cell of each element
    flipped: np.ndarray           # (n, n) True where the cell uses the SW-NE cut
    elem_lookup: np.ndarray       # (2 n^2,) grid slot -> element row, -1 if masked
    interior_index: np.ndarray    # ((n+1)^2,) column in reduced vectors, -1 on boundary
    interior_vertices: np.ndarray  # (m,) vertex ids, in column order

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior_vertices.size

    @property
    def h(self) -> float:
        """Longest element edge (the cell diagonal)."""
        return np.sqrt(2.0) * self.a / self.n

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)


def build_mesh(a: float, n: int, pattern: str = "uniform-senw") -> Mesh:
    """Triangulate ``[0, a]^2`` into ``2 n^2`` right isoceles triangles."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown mesh pattern {pattern!r}, expected one of {PATTERNS}")
    if n < 1:
        raise ValueError("n must be a positive integer")
    a = float(a)
    if not a > 0.0:
        raise ValueError("domain size a must be positive")

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    vertices = np.column_stack([ii.ravel() * (a / n), jj.ravel() * (a / n)])

    i1, i2 = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")

    if pattern == "quadrant-symmetric":
        cx = (i1 + 0.5) / n
        cy = (i2 + 0.5) / n
        flipped = (cx > 0.5) != (cy > 0.5)
        flipped &= (cx != 0.5) & (cy != 0.5)  # odd n: centerline cells stay SE-NW
    else:
        flipped = np.zeros((n, n), dtype=bool)

    sw = i2 * (n + 1) + i1
    se = sw + 1
    nw = sw + (n + 1)
    ne = nw + 1

    lower = np.where(flipped, np.stack([sw, se, ne]), np.stack([sw, se, nw]))
    upper = np.where(flipped, np.stack([sw, ne, nw]), np.stack([ne, nw, se]))

    elements = np.empty((n * n, 2, 3), dtype=np.int64)
    elements[:, 0, :] = np.moveaxis(lower, 0, -1).reshape(-1, 3)
    elements[:, 1, :] = np.moveaxis(upper, 0, -1).reshape(-1, 3)
    elements = elements.reshape(-1, 3)
    cell_id = np.repeat(np.arange(n * n), 2)

    p = vertices[elements]
    areas = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    assert np.all(areas > 0.0), "element orientation must be counterclockwise"

    vi1 = ii.ravel()
    vi2 = jj.ravel()
    is_interior = (vi1 > 0) & (vi1 < n) & (vi2 > 0) & (vi2 < n)
    interior_index = np.full(vertices.shape[0], -1, dtype=np.int64)
    interior_vertices = np.flatnonzero(is_interior)
    interior_index[interior_vertices] = np.arange(interior_vertices.size)

    return Mesh(a=a, n=n, pattern=pattern, vertices=vertices,
                elements=elements, areas=areas, cell_id=cell_id,
                flipped=flipped, elem_lookup=np.arange(2 * n * n),
                interior_index=interior_index,
                interior_vertices=interior_vertices)


def restrict_to_right_triangle(mesh: Mesh) -> Mesh:
    """Keep the elements below the anti-diagonal ``x + y = a``.

    Needs the uniform SE-NW pattern, whose element edges follow the
    anti-diagonal exactly; vertices on it become supported boundary.
    """
    if mesh.pattern != "uniform-senw":
        raise ValueError("right-triangle restriction requires the uniform-senw pattern")
    cent = mesh.centroids()
    keep = cent[:, 0] + cent[:, 1] < mesh.a * (1.0 - 1e-12)
    v = mesh.vertices
    inside = ((v[:, 0] > 0) & (v[:, 1] > 0)
              & (v[:, 0] + v[:, 1] < mesh.a * (1.0 - 1e-12)))
    interior_index = np.full(v.shape[0], -1, dtype=np.int64)
    interior_vertices = np.flatnonzero(inside)
    interior_index[interior_vertices] = np.arange(interior_vertices.size)
    lookup = np.full(2 * mesh.n * mesh.n, -1, dtype=np.int64)
    lookup[np.flatnonzero(keep)] = np.arange(int(keep.sum()))
    return Mesh(a=mesh.a, n=mesh.n, pattern=mesh.pattern, vertices=v,
                elements=mesh.elements[keep], areas=mesh.areas[keep],
                cell_id=mesh.cell_id[keep], flipped=mesh.flipped,
                elem_lookup=lookup, interior_index=interior_index,
                interior_vertices=interior_vertices)


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointLoad:
    """Transverse point force ``P`` at ``x`` (2 coordinates)."""
    x: tuple
    P: float


@dataclass(frozen=True)
class LineLoad:
    """Transverse force of density ``t`` per unit length along a segment."""
    start: tuple
    end: tuple
    t: float


@dataclass(frozen=True)
class PressureLoad:
    """Uniform transverse pressure ``p`` on a convex polygon (None = whole domain)."""
    p: float
    region: tuple | None = None  # sequence of (x, y) vertices


Load = PointLoad | LineLoad | PressureLoad


def locate_element(mesh: Mesh, x) -> int:
    """Index of an element whose closed triangle contains ``x``."""
    x = np.asarray(x, dtype=float)
    n, a = mesh.n, mesh.a
    if not (-1e-12 * a <= x[0] <= a * (1 + 1e-12)) or not (-1e-12 * a <= x[1] <= a * (1 + 1e-12)):
        raise ValueError(f"point {x} lies outside the domain [0, {a}]^2")
    i1 = min(int(np.floor(x[0] / a * n)), n - 1)
    i2 = min(int(np.floor(x[1] / a * n)), n - 1)
    u = x[0] / a * n - i1
    v = x[1] / a * n - i2
    if mesh.flipped[i2, i1]:
        low = v <= u
    else:
        low = u + v <= 1.0
    e = mesh.elem_lookup[2 * (i2 * n + i1) + (0 if low else 1)]
    if e < 0:
        raise ValueError(f"point {x} lies outside the meshed domain")
    return int(e)


def _barycentric(tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    st = np.linalg.solve(T, x - tri[0])
    return np.array([1.0 - st[0] - st[1], st[0], st[1]])


def _segment_breakpoints(mesh: Mesh, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Parameters in [0,1] where the segment crosses any grid or diagonal line."""
    d = p1 - p0
    n, a = mesh.n, mesh.a
    ts = [0.0, 1.0]
    # line families: x = k a/n, y = k a/n, x+y = k a/n, x-y = k a/n
    for coeff, values in (
        ((1.0, 0.0), np.arange(0, n + 1) * a / n),
        ((0.0, 1.0), np.arange(0, n + 1) * a / n),
        ((1.0, 1.0), np.arange(0, 2 * n + 1) * a / n),
        ((1.0, -1.0), np.arange(-n, n + 1) * a / n),
    ):
        denom = coeff[0] * d[0] + coeff[1] * d[1]
        if abs(denom) < 1e-15 * (abs(d[0]) + abs(d[1])):
            continue
        t = (values - coeff[0] * p0[0] - coeff[1] * p0[1]) / denom
        ts.extend(t[(t > 0.0) & (t < 1.0)])
    return np.unique(np.clip(np.asarray(ts), 0.0, 1.0))


def _accumulate_point(mesh: Mesh, full: np.ndarray, load: PointLoad,
                      notes: list) -> None:
    x = np.asarray(load.x, dtype=float)
    n, a = mesh.n, mesh.a
    k1 = int(np.clip(np.rint(x[0] / a * n), 0, n))
    k2 = int(np.clip(np.rint(x[1] / a * n), 0, n))
    vid = k2 * (n + 1) + k1
    if np.linalg.norm(x - mesh.vertices[vid]) <= SNAP_FRACTION * mesh.h:
        full[vid] += load.P
        if mesh.interior_index[vid] < 0:
            notes.append(f"point load at {tuple(x)} snapped to a supported "
                         "boundary vertex; it contributes zero")
        return
    e = locate_element(mesh, x)
    tri = mesh.elements[e]
    lam = _barycentric(mesh.vertices[tri], x)
    np.add.at(full, tri, load.P * lam)
    if np.any((mesh.interior_index[tri] < 0) & (np.abs(lam) > 1e-14)):
        notes.append(f"point load at {tuple(x)} is partly carried by the "
                     "supported boundary")


def _accumulate_line(mesh: Mesh, full: np.ndarray, load: LineLoad,
                     notes: list) -> None:
    p0 = np.asarray(load.start, dtype=float)
    p1 = np.asarray(load.end, dtype=float)
    if np.allclose(p0, p1):
        return
    ts = _segment_breakpoints(mesh, p0, p1)
    d = p1 - p0
    seg_len = np.linalg.norm(d)
    boundary_mass = 0.0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if t1 - t0 < 1e-15:
            continue
        mid = p0 + 0.5 * (t0 + t1) * d
        e = locate_element(mesh, mid)
        tri = mesh.elements[e]
        coords = mesh.vertices[tri]
        lam_a = _barycentric(coords, p0 + t0 * d)
        lam_b = _barycentric(coords, p0 + t1 * d)
        piece = load.t * seg_len * (t1 - t0) * 0.5 * (lam_a + lam_b)
        np.add.at(full, tri, piece)
        boundary_mass += np.abs(piece[mesh.interior_index[tri] < 0]).sum()
    if boundary_mass > 1e-12 * (1.0 + abs(load.t) * seg_len):
        notes.append("line load runs along or near the supported boundary; "
                     "that part contributes zero")


def _clip_polygon(poly: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip ``poly`` by convex CCW polygon ``clip``."""
    out = poly
    k = clip.shape[0]
    for i in range(k):
        if out.shape[0] == 0:
            break
        a, b = clip[i], clip[(i + 1) % k]
        edge = b - a
        d = _cross2(edge, out - a)  # >= 0 means inside
        nxt = []
        m = out.shape[0]
        for j in range(m):
            cur, dcur = out[j], d[j]
            prv, dprv = out[j - 1], d[j - 1]
            if dcur >= 0.0:
                if dprv < 0.0:
                    nxt.append(prv + (dprv / (dprv - dcur)) * (cur - prv))
                nxt.append(cur)
            elif dprv >= 0.0:
                nxt.append(prv + (dprv / (dprv - dcur)) * (cur - prv))
        out = np.asarray(nxt).reshape(-1, 2)
    return out


def _polygon_area_centroid(poly: np.ndarray) -> tuple[float, np.ndarray]:
    if poly.shape[0] < 3:
        return 0.0, np.zeros(2)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-30:
        return 0.0, poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def _accumulate_pressure(mesh: Mesh, full: np.ndarray, load: PressureLoad,
                         notes: list) -> None:
    if load.region is None:
        # whole domain: each hat collects area/3 from every incident element
        contrib = np.repeat(load.p * mesh.areas / 3.0, 3)
        np.add.at(full, mesh.elements.ravel(), contrib)
        return
    region = np.asarray(load.region, dtype=float)
    if region.ndim != 2 or region.shape[0] < 3 or region.shape[1] != 2:
        raise ValueError("pressure region must be a polygon with >= 3 vertices")
    if _polygon_area_centroid(region)[0] < 0.0:
        region = region[::-1]
    lo, hi = region.min(axis=0), region.max(axis=0)
    cent = mesh.centroids()
    r = mesh.h  # triangle circumradius bound
    cand = np.flatnonzero((cent[:, 0] > lo[0] - r) & (cent[:, 0] < hi[0] + r)
                          & (cent[:, 1] > lo[1] - r) & (cent[:, 1] < hi[1] + r))
    for e in cand:
        tri = mesh.vertices[mesh.elements[e]]
        part = _clip_polygon(tri, region)
        area, c = _polygon_area_centroid(part)
        if area <= 0.0:
            continue
        lam = _barycentric(tri, c)
        np.add.at(full, mesh.elements[e], load.p * area * lam)


def nodal_load_vector(mesh: Mesh, loads, *, all_vertices: bool = False) -> np.ndarray:
    """Assemble the P1 load functional ``f(j) = <load, hat_j>``.

    By default the vector is restricted to the interior (free) vertices; any
    mass carried by supported boundary hats is dropped with a warning.  With
    ``all_vertices=True`` the full vector is returned (its sum equals the
    total applied load — the hats form a partition of unity).
    """
    if isinstance(loads, (PointLoad, LineLoad, PressureLoad)):
        loads = [loads]
    full = np.zeros(mesh.vertices.shape[0])
    notes: list[str] = []
    for load in loads:
        if isinstance(load, PointLoad):
            _accumulate_point(mesh, full, load, notes)
        elif isinstance(load, LineLoad):
            _accumulate_line(mesh, full, load, notes)
        elif isinstance(load, PressureLoad):
            _accumulate_pressure(mesh, full, load, notes)
        else:
            raise TypeError(f"unknown load type: {load!r}")
    if all_vertices:
        return full
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return full[mesh.interior_vertices]
