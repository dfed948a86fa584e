"""Conic solver tests: eigensolver, cone kernels, battery problems, invariants."""

import numpy as np
import pytest
import scipy.sparse as sp

from memopt.conic import ConeBlock, ConeProgram, ConicSolution, smat3, solve, svec3
from memopt.conic.cones import ConeWorkspace
from memopt.conic.eig3 import _jacobi3, eigh3, eigvals3

SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# batched 3x3 eigendecomposition
# ---------------------------------------------------------------------------


def _random_sym(rng, n, scale=1.0):
    A = rng.normal(size=(n, 3, 3)) * scale
    return (A + np.swapaxes(A, 1, 2)) / 2.0


class TestEig3:
    def test_eigvals_match_lapack_random(self):
        rng = np.random.default_rng(11)
        A = _random_sym(rng, 500)
        w = eigvals3(A)
        w_ref = np.linalg.eigvalsh(A)
        assert np.max(np.abs(w - w_ref)) < 1e-12

    def test_jacobi_matches_lapack(self):
        rng = np.random.default_rng(12)
        A = _random_sym(rng, 300)
        w, V = _jacobi3(A)
        assert np.max(np.abs(w - np.linalg.eigvalsh(A))) < 1e-13
        recon = np.einsum("nik,nk,njk->nij", V, w, V)
        assert np.max(np.abs(recon - A)) < 1e-13

    def test_eigh3_reconstruction_and_orthogonality(self):
        rng = np.random.default_rng(13)
        A = _random_sym(rng, 400, scale=3.0)
        w, V = eigh3(A)
        recon = np.einsum("nik,nk,njk->nij", V, w, V)
        assert np.max(np.abs(recon - A)) < 1e-12
        gram = np.einsum("nki,nkj->nij", V, V)
        assert np.max(np.abs(gram - np.eye(3))) < 1e-12
        assert np.all(np.diff(w, axis=1) >= -1e-14)

    def test_eigh3_degenerate_and_extreme(self):
        rng = np.random.default_rng(14)
        mats = []
        for d in (
            [1, 1, 1], [1, 1, 2], [0, 0, 1], [1, 1 + 1e-13, 2],
            [1e-8, 1, 1e8], [-3, -3, 5], [0, 0, 0], [9.2e-5, 4.4e-4, 2.7e3],
        ):
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            mats.append(q @ np.diag(d) @ q.T)
        mats += [np.diag([3.0, 1.0, 2.0]), np.eye(3) * 7.0, np.zeros((3, 3))]
        A = np.array([(m + m.T) / 2.0 for m in mats])
        w, V = eigh3(A)
        w_ref = np.linalg.eigvalsh(A)
        scale = np.maximum(np.abs(w_ref).max(axis=1), 1.0)
        assert np.max(np.abs(w - w_ref) / scale[:, None]) < 1e-12
        recon = np.einsum("nik,nk,njk->nij", V, w, V)
        assert np.max(np.abs(recon - A) / scale[:, None, None]) < 1e-12

    def test_eigh3_small_eigenvalues_of_stiff_matrix(self):
        # clustered small pair far below the dominant eigenvalue: the
        # fallback must recover them to absolute accuracy ~eps * |A|
        rng = np.random.default_rng(15)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        A = q @ np.diag([9.2e-5, 4.4e-4, 2690.0]) @ q.T
        A = (A + A.T) / 2.0
        w, _ = eigh3(A)
        assert np.allclose(w, [9.2e-5, 4.4e-4, 2690.0], rtol=1e-6, atol=1e-11)


# ---------------------------------------------------------------------------
# svec coordinates
# ---------------------------------------------------------------------------


class TestSvec:
    def test_roundtrip_and_inner_product(self):
        rng = np.random.default_rng(21)
        A = _random_sym(rng, 50)
        B = _random_sym(rng, 50)
        assert np.allclose(smat3(svec3(A)), A, atol=1e-15)
        frob = np.einsum("nij,nij->n", A, B)
        assert np.allclose(np.sum(svec3(A) * svec3(B), axis=1), frob, atol=1e-12)


# ---------------------------------------------------------------------------
# cone workspace identities
# ---------------------------------------------------------------------------


def _mixed_blocks():
    return [
        ConeBlock("free", 3),
        ConeBlock("quad", 1),
        ConeBlock("quad", 1),
        ConeBlock("quad", 4),
        ConeBlock("psd3", 6),
    ]


def _random_interior(rng, ws):
    v = np.zeros(ws.n)
    v[ws.pos_idx] = rng.random(ws.pos_idx.size) + 0.2
    for _, idx in ws.soc_groups:
        for row in idx:
            q = rng.normal(size=row.size - 1)
            v[row[0]] = np.linalg.norm(q) * (1.0 + rng.random())
            v[row[1:]] = q
    for row in ws.psd_idx:
        M = rng.normal(size=(3, 3))
        v[row] = svec3(M @ M.T + 0.1 * np.eye(3))
    return v


class TestConeWorkspace:
    def setup_method(self):
        self.ws = ConeWorkspace(_mixed_blocks())
        rng = np.random.default_rng(31)
        self.x = _random_interior(rng, self.ws)
        self.s = _random_interior(rng, self.ws)
        assert self.ws.update_scaling(self.x, self.s)
        self.rng = rng

    def test_degree_counts(self):
        # 2 nonnegative coordinates + 1 quad cone + one psd3 block
        assert self.ws.degree == 2 + 1 + 3

    def test_nt_scaling_point(self):
        lam_w = self.ws.apply_W(self.s)
        lam_winv = self.ws.apply_Winv(self.x)
        assert np.max(np.abs(lam_w - lam_winv)) < 1e-12
        assert np.max(np.abs(lam_w - self.ws.lam)) < 1e-12

    def test_w_inverse_roundtrip(self):
        u = self.rng.normal(size=self.ws.n)
        u[self.ws.free_idx] = 0.0
        assert np.max(np.abs(self.ws.apply_W(self.ws.apply_Winv(u)) - u)) < 1e-12

    def test_wm2_matrix_consistency(self):
        wm2 = self.ws.wm2_matrix()
        cone = np.setdiff1d(np.arange(self.ws.n), self.ws.free_idx)
        assert np.max(np.abs((wm2 @ self.x)[cone] - self.s[cone])) < 1e-12
        u = self.rng.normal(size=self.ws.n)
        u[self.ws.free_idx] = 0.0
        two = self.ws.apply_Winv(self.ws.apply_Winv(u))
        assert np.max(np.abs(two - wm2 @ u)) < 1e-12

    def test_jordan_identities(self):
        v = self.rng.normal(size=self.ws.n)
        v[self.ws.free_idx] = 0.0
        z = self.ws.jordan_solve_lam(v)
        assert np.max(np.abs(self.ws.jordan_prod(self.ws.lam, z) - v)) < 1e-12
        assert np.max(
            np.abs(self.ws.jordan_prod(self.ws.lam, self.ws.e) - self.ws.lam)
        ) < 1e-14
        assert np.max(
            np.abs(self.ws.lam_sq() - self.ws.jordan_prod(self.ws.lam, self.ws.lam))
        ) < 1e-14

    def test_inner_product_is_lambda_norm(self):
        assert abs(self.x @ self.s - self.ws.lam @ self.ws.lam) < 1e-12

    def test_max_step_lands_on_boundary(self):
        for seed in range(5):
            u = np.random.default_rng(100 + seed).normal(size=self.ws.n)
            u[self.ws.free_idx] = 0.0
            a = self.ws.max_step(u)
            if np.isfinite(a):
                margin = self.ws.residual_in_cone(self.ws.lam + a * u)
                assert margin > -1e-10
                inside = self.ws.residual_in_cone(self.ws.lam + 0.5 * a * u)
                assert inside > -1e-14

    def test_max_step_interior_direction_unbounded(self):
        assert np.isinf(self.ws.max_step(self.ws.e))


# ---------------------------------------------------------------------------
# solver battery (frozen optima)
# ---------------------------------------------------------------------------


def soc_battery_program():
    """min t s.t. (t, 3, 4) in Quad(3); optimum 5 at (5, 3, 4)."""
    A = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    return ConeProgram(
        c=np.array([1.0, 0.0, 0.0]),
        A=A,
        b=np.array([3.0, 4.0]),
        cones=[ConeBlock("quad", 3)],
    )


def psd_battery_program():
    """min trace(X) s.t. X psd, X11 = 1, X12 = 1; optimum 2.

    The Schur complement of the leading entry forces X22 >= X12^2 / X11 = 1
    while X33 can vanish, so trace(X) >= 2 with equality attainable.
    """
    A = sp.csr_matrix(
        np.array([[1.0, 0, 0, 0, 0, 0], [0, 0, 0, 1.0, 0, 0]]))
    return ConeProgram(
        c=np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
        A=A,
        b=np.array([1.0, SQRT2]),
        cones=[ConeBlock("psd3", 6)],
    )


class TestBattery:
    def test_quadratic_cone_distance(self):
        sol = solve(soc_battery_program(), gap_tol=1e-10, feas_tol=1e-10)
        assert sol.status == "Optimal"
        assert abs(sol.x[0] - 5.0) < 1e-8
        assert np.allclose(sol.x, [5.0, 3.0, 4.0], atol=1e-8)

    def test_psd_trace_completion(self):
        prog = psd_battery_program()
        sol = solve(prog, gap_tol=1e-10, feas_tol=1e-10)
        assert sol.status == "Optimal"
        assert abs(prog.c @ sol.x - 2.0) < 1e-8
        X = smat3(sol.x)
        assert abs(X[0, 0] - 1.0) < 1e-8
        assert abs(X[0, 1] - 1.0) < 1e-8
        assert abs(X[1, 1] - 1.0) < 1e-7
        assert np.min(np.linalg.eigvalsh(X)) > -1e-9

    def test_determinism_bit_identical(self):
        runs = []
        for _ in range(3):
            sol = solve(soc_battery_program(), gap_tol=1e-10, feas_tol=1e-10)
            runs.append(
                (sol.x.tobytes(), sol.y.tobytes(), sol.s.tobytes(), sol.iterations))
        assert runs[0] == runs[1] == runs[2]

    def test_primal_infeasible_detected(self):
        prog = ConeProgram(
            c=np.array([1.0]),
            A=sp.csr_matrix(np.array([[1.0]])),
            b=np.array([-1.0]),
            cones=[ConeBlock("quad", 1)],
        )
        sol = solve(prog)
        assert sol.status == "Infeasible"
        assert "primal" in sol.message

    def test_unbounded_detected(self):
        prog = ConeProgram(
            c=np.array([0.0, -1.0]),
            A=sp.csr_matrix(np.array([[1.0, -1.0]])),
            b=np.array([0.0]),
            cones=[ConeBlock("quad", 2)],
        )
        sol = solve(prog)
        assert sol.status == "Infeasible"
        assert "unbounded" in sol.message

    def test_zero_block_elimination_and_slack_recovery(self):
        # z fixed to 0, so the first row forces f + q1 = 1
        rows = np.array([[1.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, -2.0]])
        prog = ConeProgram(
            c=np.array([0.0, 1.0, 1.0, 0.0]),
            A=sp.csr_matrix(rows),
            b=np.array([1.0, 0.0]),
            cones=[ConeBlock("zero", 1), ConeBlock("free", 1), ConeBlock("quad", 2)],
        )
        sol = solve(prog, gap_tol=1e-10, feas_tol=1e-10)
        assert sol.status == "Optimal"
        assert abs(prog.c @ sol.x - 1.0) < 1e-8
        assert sol.x[0] == 0.0
        # the zero block's dual slack is c_z - A_z^T y, free in sign
        expected = prog.c[0] - prog.A.toarray()[:, 0] @ sol.y
        assert abs(sol.s[0] - expected) < 1e-12

    def test_scaling_equivariance_on_unique_solution(self):
        base = soc_battery_program()
        sol1 = solve(base, gap_tol=1e-10, feas_tol=1e-10)
        scaled = ConeProgram(
            c=base.c, A=base.A, b=2.0 * base.b, cones=base.cones)
        sol2 = solve(scaled, gap_tol=1e-10, feas_tol=1e-10)
        denom = max(1.0, float(np.max(np.abs(2.0 * sol1.x))))
        assert np.max(np.abs(sol2.x - 2.0 * sol1.x)) / denom < 10 * 1e-8


# ---------------------------------------------------------------------------
# random strictly-feasible programs
# ---------------------------------------------------------------------------


def _random_program(seed, m=8):
    rng = np.random.default_rng(seed)
    blocks = _mixed_blocks()
    ws = ConeWorkspace(blocks)
    n = ws.n
    A = sp.csr_matrix(rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.7))
    x0 = _random_interior(rng, ws)
    x0[ws.free_idx] = rng.normal(size=ws.free_idx.size)
    b = A @ x0
    y0 = rng.normal(size=m)
    s0 = _random_interior(rng, ws)
    s0[ws.free_idx] = 0.0
    c = A.T @ y0 + s0
    return ConeProgram(c=c, A=A, b=b, cones=blocks), ws


class TestRandomPrograms:
    @pytest.mark.parametrize("seed", [101, 107, 115, 123, 142])
    def test_solves_to_tolerance(self, seed):
        prog, ws = _random_program(seed)
        sol = solve(prog, gap_tol=1e-8, feas_tol=1e-8)
        assert sol.status == "Optimal"
        assert sol.rel_gap <= 1e-8
        assert sol.primal_res <= 1e-8
        assert sol.dual_res <= 1e-8
        # objective agreement between primal and dual
        pcost = float(prog.c @ sol.x)
        dcost = float(prog.b @ sol.y)
        assert abs(pcost - dcost) <= 1e-8 * max(1.0, abs(pcost))
        # cone membership of the returned point within -1e-9
        assert ws.residual_in_cone(sol.x) > -1e-9
        assert ws.residual_in_cone(sol.s) > -1e-9

    def test_iteration_log_sink(self):
        lines = []
        sol = solve(soc_battery_program(), log=lines.append)
        assert sol.status == "Optimal"
        assert len(lines) >= 3
        assert all("pcost" in ln and "gap" in ln for ln in lines)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


class TestValidation:
    def test_rejects_wrong_dimensions(self):
        prog = ConeProgram(
            c=np.zeros(3),
            A=sp.csr_matrix(np.zeros((1, 3))),
            b=np.zeros(1),
            cones=[ConeBlock("quad", 4)],
        )
        with pytest.raises(ValueError, match="cone dims"):
            prog.validate()

    def test_rejects_empty_row_block(self):
        prog = ConeProgram(
            c=np.zeros(3),
            A=sp.csr_matrix(np.zeros((0, 3))),
            b=np.zeros(0),
            cones=[ConeBlock("quad", 3)],
        )
        with pytest.raises(ValueError, match="equality rows"):
            prog.validate()

    def test_rejects_unknown_kind_and_bad_psd_dim(self):
        with pytest.raises(ValueError, match="unknown cone kind"):
            ConeBlock("exp", 3)
        with pytest.raises(ValueError, match="psd3"):
            ConeBlock("psd3", 5)

    def test_rejects_all_zero_programs(self):
        prog = ConeProgram(
            c=np.zeros(2),
            A=sp.csr_matrix(np.eye(2)),
            b=np.zeros(2),
            cones=[ConeBlock("zero", 2)],
        )
        with pytest.raises(ValueError, match="zero cones"):
            solve(prog)

    def test_solution_flags(self):
        sol = solve(soc_battery_program())
        assert isinstance(sol, ConicSolution)
        assert sol.optimal
        assert sol.iterations > 0
