"""Recovery of physical fields and designs from a solved membrane program.

The solver returns one long primal vector and the equality multipliers;
this module slices them back into per-element stresses, nodal
displacement fields, thickness designs, scaled (physical) fields, and a
verification report of the optimality conditions.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .assembly import geometric_operators
from .conic import ConeProgram, ConicSolution
from .geometry import Mesh
from .material import (
    Material,
    membership_C,
    outer_coords,
    principal_axes,
    rho_polar,
)

SQRT2 = np.sqrt(2.0)

#: Elements whose stress gauge falls below this fraction of the maximum
#: are treated as void (no material, scaled fields undefined).
VOID_REL_TOL = 1e-12

#: Seed for the sampled two-point verification; fixed so reruns are
#: byte-identical.
_TWO_POINT_SEED = 74205


@dataclass(frozen=True)
class FemSolution:
    """Fields recovered from a solved membrane program.

    ``u1``, ``u2``, ``w`` live on interior vertices (boundary values are
    zero).  Per-element arrays use scaled-vector coordinates for
    symmetric tensors: the third slot carries sqrt(2) times the (1,2)
    entry.  ``xi`` is the in-plane strain of (u1, u2) alone; the full
    strain measure of the displacement pair adds ``outer_coords(theta)/2``.
    """

    mesh: Mesh
    material: Material
    f: np.ndarray          # interior nodal load vector
    Z_h: float             # optimal value sum(r0 + tau33)
    u1: np.ndarray
    u2: np.ndarray
    w: np.ndarray
    xi: np.ndarray         # (n_elements, 3)
    theta: np.ndarray      # (n_elements, 2)
    sigma_hat: np.ndarray  # (n_elements, 3), per unit area
    q_hat: np.ndarray      # (n_elements, 2), per unit area
    r0: np.ndarray         # (n_elements,), area-integrated gauge values
    tau33: np.ndarray      # (n_elements,), area-integrated transverse term
    status: str
    rel_gap: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"


@dataclass(frozen=True)
class Design:
    """Thickness and scaled-field stages derived from a FemSolution.

    Stages fill in as the pipeline runs: ``thickness`` sets ``b_raw``,
    ``mass`` and ``C_min``; ``average_pairs`` sets ``b_avg``; ``trim``
    sets ``b_trim`` and ``b0``; ``scale_optimal`` sets the scaled
    stresses/displacements and the void mask.
    """

    V0: float
    Z_h: float
    b_raw: np.ndarray
    mass: float
    C_min: float
    b_avg: np.ndarray | None = None
    b_trim: np.ndarray | None = None
    b0: float | None = None
    sigma_check: np.ndarray | None = None
    q_check: np.ndarray | None = None
    u_check: np.ndarray | None = None   # (m, 2)
    w_check: np.ndarray | None = None
    void: np.ndarray | None = None


def recover_fields(prog: ConeProgram, sol: ConicSolution,
                   mesh: Mesh) -> FemSolution:
    """Slice a solved program back into nodal and element fields.

    Works for any solver status; downstream consumers should check
    ``fem.optimal`` (partial fields from a non-optimal iterate are still
    returned so they can be inspected).
    """
    labels = prog.labels
    if labels.get("kind") != "membrane-dual":
        raise ValueError("program was not assembled as a membrane dual")
    ne = labels["n_elements"]
    m = labels["n_interior"]
    if mesh.n_elements != ne or mesh.n_interior != m:
        raise ValueError("mesh does not match the assembled program")
    material = labels["material"]

    base = labels["stride"] * np.arange(ne)
    r0 = sol.x[base + 0]
    t11 = sol.x[base + 1]
    t22 = sol.x[base + 2]
    tau33 = sol.x[base + 3]
    t12 = sol.x[base + 4]
    q1 = sol.x[base + 5]
    q2 = sol.x[base + 6]

    area = mesh.areas
    sigma_hat = np.column_stack([t11, t22, t12]) / area[:, None]
    q_hat = np.column_stack([q1, q2]) / area[:, None]

    u1 = sol.y[0:m].copy()
    u2 = sol.y[m:2 * m].copy()
    w = sol.y[2 * m:3 * m].copy()
    ops = geometric_operators(mesh)
    xi = ops.strain(u1, u2)
    theta = ops.gradient(w)

    return FemSolution(
        mesh=mesh, material=material, f=prog.b[2 * m:3 * m].copy(),
        Z_h=float(r0.sum() + tau33.sum()),
        u1=u1, u2=u2, w=w, xi=xi, theta=theta,
        sigma_hat=sigma_hat, q_hat=q_hat, r0=r0.copy(), tau33=tau33.copy(),
        status=sol.status, rel_gap=sol.rel_gap, iterations=sol.iterations)


def thickness(fem: FemSolution, V0: float, *, tol: float = 1e-12) -> Design:
    """First design stage: per-element thickness from the gauge values.

    ``b_raw = (2 V0 / Z_h) * r0 / area``; its mass integrates to ``V0``
    up to the energy-split residual of the solve.
    """
    V0 = float(V0)
    if V0 <= 0.0:
        raise ValueError(f"V0 must be positive, got {V0}")
    if not fem.Z_h > tol:
        raise ValueError(
            f"optimal value {fem.Z_h:g} is not positive; the load is "
            "degenerate and no thickness design exists")
    b_raw = (2.0 * V0 / fem.Z_h) * fem.r0 / fem.mesh.areas
    mass = float(b_raw @ fem.mesh.areas)
    return Design(V0=V0, Z_h=fem.Z_h, b_raw=b_raw, mass=mass,
                  C_min=compliance(fem.Z_h, V0))


def average_pairs(design: Design, mesh: Mesh) -> Design:
    """Average thickness over the two triangles of each grid cell.

    Low-order designs oscillate at mesh scale between the two triangles
    of a cell; the area-weighted cell mean removes that without changing
    the mass.  Idempotent, and a no-op for cells holding one triangle.
    """
    b = design.b_avg if design.b_avg is not None else design.b_raw
    ncell = int(mesh.cell_id.max()) + 1 if mesh.cell_id.size else 0
    mass_cell = np.zeros(ncell)
    area_cell = np.zeros(ncell)
    np.add.at(mass_cell, mesh.cell_id, b * mesh.areas)
    np.add.at(area_cell, mesh.cell_id, mesh.areas)
    b_avg = mass_cell[mesh.cell_id] / area_cell[mesh.cell_id]
    return dataclasses.replace(design, b_avg=b_avg)


def trim(design: Design, b0: float | None = None, *,
         fraction: float | None = None) -> Design:
    """Cap the averaged thickness at ``b0`` (or ``fraction * max``).

    Exactly one of ``b0`` and ``fraction`` must be given.  Capping
    sacrifices mass around load concentrations in exchange for a field
    whose variation is visible; it is the display stage, not a design
    stage.
    """
    if (b0 is None) == (fraction is None):
        raise ValueError("give exactly one of b0 or fraction")
    if design.b_avg is None:
        raise ValueError("run average_pairs before trim")
    if fraction is not None:
        b0 = float(fraction) * float(design.b_avg.max())
    b0 = float(b0)
    if b0 <= 0.0:
        raise ValueError(f"trim cap must be positive, got {b0}")
    return dataclasses.replace(design, b0=b0,
                               b_trim=np.minimum(design.b_avg, b0))


def compliance(Z: float, V0: float) -> float:
    """Minimum compliance achievable with material volume ``V0``.

    ``C_min = (3/4) * (Z^4 / (2 V0))^(1/3)``; degree 4/3 in the load.
    """
    Z = float(Z)
    V0 = float(V0)
    if Z < 0.0 or V0 <= 0.0:
        raise ValueError("need Z >= 0 and V0 > 0")
    return 0.75 * (Z ** 4 / (2.0 * V0)) ** (1.0 / 3.0)


def scale_optimal(fem: FemSolution, V0: float,
                  design: Design | None = None) -> Design:
    """Rescale the normalized fields to the physical optimum for ``V0``.

    The solve is run in load-normalized units; the optimal membrane for
    a concrete volume budget follows by homogeneity.  With
    ``k = Z_h / (2 V0)``: thickness density ``(1/k) * rho0(sigma_hat)``,
    unit-density stress ``k^(2/3) * sigma_hat / rho0(sigma_hat)`` and
    transverse ratio ``k * q_hat / rho0(sigma_hat)``, displacements
    ``k^(2/3) * u`` and deflection ``k^(1/3) * w``.  Elements with
    ``rho0`` below ``VOID_REL_TOL`` of the maximum carry no material;
    their per-material fields are NaN.
    """
    if design is None:
        design = thickness(fem, V0)
    k = fem.Z_h / (2.0 * design.V0)
    rho0 = rho_polar(fem.material, fem.sigma_hat)
    void = rho0 <= VOID_REL_TOL * max(float(rho0.max()), 0.0)
    denom = np.where(void, 1.0, rho0)
    sigma_check = np.where(void[:, None], np.nan,
                           k ** (2.0 / 3.0) * fem.sigma_hat / denom[:, None])
    q_check = np.where(void[:, None], np.nan,
                       k * fem.q_hat / denom[:, None])
    return dataclasses.replace(
        design,
        sigma_check=sigma_check, q_check=q_check,
        u_check=k ** (2.0 / 3.0) * np.column_stack([fem.u1, fem.u2]),
        w_check=k ** (1.0 / 3.0) * fem.w,
        void=void)


def _two_point_violation(fem: FemSolution, n_pairs: int = 10_000) -> float:
    """Worst sampled violation of the pairwise displacement bound.

    In the spectral-gauge mode the pointwise strain constraint
    integrates along segments to
    ``(w(x) - w(y))^2 / 2 + <u(x) - u(y), x - y> <= |x - y|^2 / sqrt(E)``
    for every vertex pair; fields extend by zero to the boundary.
    Returns max(lhs - rhs), which should be <= solver tolerance.
    """
    mesh = fem.mesh
    nv = mesh.vertices.shape[0]
    u = np.zeros((nv, 2))
    wfull = np.zeros(nv)
    u[mesh.interior_vertices, 0] = fem.u1
    u[mesh.interior_vertices, 1] = fem.u2
    wfull[mesh.interior_vertices] = fem.w

    rng = np.random.default_rng(_TWO_POINT_SEED)
    i = rng.integers(0, nv, size=n_pairs)
    j = rng.integers(0, nv, size=n_pairs)
    dx = mesh.vertices[i] - mesh.vertices[j]
    dw = wfull[i] - wfull[j]
    du = u[i] - u[j]
    lhs = 0.5 * dw ** 2 + np.einsum("ij,ij->i", du, dx)
    rhs = np.einsum("ij,ij->i", dx, dx) / np.sqrt(fem.material.E)
    return float((lhs - rhs).max())


def verify_optimality(fem: FemSolution, mat: Material | None = None,
                      tol: float = 1e-6) -> dict:
    """Residuals of the exactness conditions tying the two programs.

    All conditions are evaluated in area-integrated stress coordinates
    so that summed residuals compare against ``tol * Z_h``:

    - ``condition_i``:   <theta (x) theta / 2 + xi, tau> - rho0(tau)
    - ``condition_ii``:  |q - sigma theta| (integrated)
    - ``condition_iii``: |r0 - rho0(tau)| and |tau33 - <sigma^+ q, q>/2|

    plus the global energy split, the value identity against <f, w>,
    strain-set membership per element, the a-priori displacement bounds,
    and (spectral-gauge mode) the sampled two-point inequality.
    """
    mat = mat if mat is not None else fem.material
    mesh = fem.mesh
    area = mesh.areas
    tau = fem.sigma_hat * area[:, None]
    q_int = fem.q_hat * area[:, None]
    rho0_int = rho_polar(mat, tau)
    strain_full = fem.xi + 0.5 * outer_coords(fem.theta)

    res_i = np.abs(np.sum(strain_full * tau, axis=1) - rho0_int)

    s11, s22 = tau[:, 0], tau[:, 1]
    s12 = tau[:, 2] / SQRT2
    res_ii = np.hypot(s11 * fem.theta[:, 0] + s12 * fem.theta[:, 1] - q_int[:, 0],
                      s12 * fem.theta[:, 0] + s22 * fem.theta[:, 1] - q_int[:, 1])

    res_iii_r0 = np.abs(fem.r0 - rho0_int)
    # Transverse split: tau33 against <sigma^+ q, q>/2, eigen-based so
    # void elements (zero stress, zero q) contribute zero.
    lam1, lam2, v1, v2 = principal_axes(tau)
    scale = np.maximum(np.abs(lam1), np.abs(lam2))
    qv1 = np.einsum("ij,ij->i", q_int, v1)
    qv2 = np.einsum("ij,ij->i", q_int, v2)
    quad = np.zeros_like(lam1)
    for lam, qc in ((lam1, qv1), (lam2, qv2)):
        pos = lam > 1e-14 * np.maximum(scale, 1e-300)
        quad += np.where(pos, qc * qc / np.where(pos, lam, 1.0), 0.0)
    res_iii_t33 = np.abs(fem.tau33 - 0.5 * quad)

    z = max(abs(fem.Z_h), 1e-300)
    equi = abs(fem.r0.sum() - fem.tau33.sum())
    value_gap = abs(fem.Z_h - float(fem.f @ fem.w))
    member = membership_C(mat, fem.xi, fem.theta)

    diam = float(np.hypot(mesh.a, mesh.a))
    c1 = mat.c1_equiv
    u_inf = float(max(np.abs(fem.u1).max(), np.abs(fem.u2).max(), 0.0)) \
        if fem.u1.size else 0.0
    w_inf = float(np.abs(fem.w).max()) if fem.w.size else 0.0

    report = {
        "Z_h": fem.Z_h,
        "condition_i": res_i,
        "condition_ii": res_ii,
        "condition_iii_r0": res_iii_r0,
        "condition_iii_t33": res_iii_t33,
        "sum_i": float(res_i.sum()),
        "sum_ii": float(res_ii.sum()),
        "sum_iii_r0": float(res_iii_r0.sum()),
        "sum_iii_t33": float(res_iii_t33.sum()),
        "equi_repartition": equi,
        "value_gap": value_gap,
        "membership_ok": bool(member.all()),
        "membership_fraction": float(member.mean()),
        "u_inf": u_inf,
        "w_inf": w_inf,
        "u_bound": diam / c1,
        "w_bound": diam / np.sqrt(2.0 * c1),
        "apriori_ok": bool(u_inf <= diam / c1 + 1e-12
                           and w_inf <= diam / np.sqrt(2.0 * c1) + 1e-12),
        "two_point_max": None,
        "tol": tol,
    }
    if mat.mode == "michell":
        report["two_point_max"] = _two_point_violation(fem)

    ok = (report["sum_i"] <= tol * z and report["sum_ii"] <= tol * z
          and report["sum_iii_r0"] <= tol * z
          and report["sum_iii_t33"] <= tol * z
          and equi <= tol * z and value_gap <= tol * z
          and report["membership_ok"] and report["apriori_ok"])
    if report["two_point_max"] is not None:
        ok = ok and report["two_point_max"] <= tol * max(1.0, diam ** 2)
    report["ok"] = bool(ok)
    return report


def fmd_hooke_field(fem: FemSolution, Lambda0: float) -> dict:
    """Spectral material records for the stiffness-distribution reading.

    In the spectral-gauge mode the same solution distributes a trace
    budget ``Lambda0`` of Hooke tensors: per non-void element the stress
    direction is normalized to unit trace and eigendecomposed, and the
    density is ``(2 Lambda0 / Z_h) * rho0(sigma_hat)`` so the total
    reconstructed trace integrates to ``Lambda0``.  Eigenvalue ties get
    the canonical axes.
    """
    if fem.material.mode != "michell":
        raise ValueError("stiffness-distribution records require the "
                         "spectral-gauge (michell) material mode")
    if not fem.Z_h > 0.0:
        raise ValueError("optimal value must be positive")
    Lambda0 = float(Lambda0)
    rho0 = rho_polar(fem.material, fem.sigma_hat)
    void = rho0 <= VOID_REL_TOL * max(float(rho0.max()), 0.0)
    density = (2.0 * Lambda0 / fem.Z_h) * rho0

    tr = fem.sigma_hat[:, 0] + fem.sigma_hat[:, 1]
    denom = np.where(void, 1.0, tr)
    unit = fem.sigma_hat / denom[:, None]
    lam1, lam2, v1, v2 = principal_axes(unit)
    tie = np.abs(lam1 - lam2) <= 1e-12 * np.maximum(1.0, np.abs(lam1) + np.abs(lam2))
    v1 = np.where(tie[:, None], [1.0, 0.0], v1)
    v2 = np.where(tie[:, None], [0.0, 1.0], v2)
    for arr in (lam1, lam2):
        arr[void] = np.nan
    return {"density": np.where(void, 0.0, density),
            "s1": lam1, "s2": lam2, "e1": v1, "e2": v2, "void": void}


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("elem_id", "cx", "cy", "area", "b_raw", "b_avg", "b_trim",
               "s11", "s22", "s12", "q1", "q2")


def write_csv(fem: FemSolution, design: Design, path) -> None:
    """One row per element: ids, centroids, thickness stages, stresses.

    Stress columns are the scaled-vector coordinates of ``sigma_hat``
    (the ``s12`` column holds sqrt(2) times the tensor entry, so the
    three columns dot against a strain triple directly); ``q1, q2`` are
    the transverse components per unit area.  Missing stages are written
    as empty fields.
    """
    cent = fem.mesh.centroids()

    def num(v) -> str:
        return repr(float(v))

    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for e in range(fem.mesh.n_elements):
            b_avg = "" if design.b_avg is None else num(design.b_avg[e])
            b_trim = "" if design.b_trim is None else num(design.b_trim[e])
            writer.writerow([
                e, num(cent[e, 0]), num(cent[e, 1]),
                num(fem.mesh.areas[e]), num(design.b_raw[e]),
                b_avg, b_trim,
                num(fem.sigma_hat[e, 0]), num(fem.sigma_hat[e, 1]),
                num(fem.sigma_hat[e, 2]),
                num(fem.q_hat[e, 0]), num(fem.q_hat[e, 1]),
            ])


def summary_dict(fem: FemSolution, design: Design | None = None,
                 report: dict | None = None) -> dict:
    """JSON-ready run summary."""
    out = {
        "Z_h": fem.Z_h,
        "C_min": design.C_min if design is not None else None,
        "mass": design.mass if design is not None else None,
        "iterations": fem.iterations,
        "status": fem.status,
        "rel_gap": fem.rel_gap,
        "max_residuals": None,
    }
    if report is not None:
        out["max_residuals"] = {
            "condition_i": float(report["condition_i"].max(initial=0.0)),
            "condition_ii": float(report["condition_ii"].max(initial=0.0)),
            "condition_iii_r0": float(report["condition_iii_r0"].max(initial=0.0)),
            "condition_iii_t33": float(report["condition_iii_t33"].max(initial=0.0)),
            "equi_repartition": report["equi_repartition"],
            "value_gap": report["value_gap"],
            "membership_ok": report["membership_ok"],
            "two_point_max": report["two_point_max"],
            "ok": report["ok"],
        }
    return out


def write_summary(fem: FemSolution, design: Design | None,
                  report: dict | None, path) -> dict:
    """Write the JSON summary; returns the dict that was written."""
    out = summary_dict(fem, design, report)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
