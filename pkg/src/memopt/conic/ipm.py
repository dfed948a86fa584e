"""Homogeneous self-dual interior-point solver with NT scaling.

The algorithm embeds ``min <c,x> s.t. Ax = b, x in K`` into the homogeneous
model in (x, y, s, tau, kappa), takes Mehrotra predictor-corrector steps in
the Nesterov-Todd scaled space, and reads optimality or an infeasibility
certificate off the normalized iterate.  The KKT solves reuse one sparse
factorization per iteration (two right-hand sides) plus an iterative
refinement step; a fraction-to-boundary factor of 0.99 keeps iterates
strictly interior.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeWorkspace
from .kkt import KKTSolver
from .program import ConeProgram, ConicSolution

_STEP_FRACTION = 0.99
_MAX_DELTA_BUMPS = 2


def _split_zero_blocks(prog: ConeProgram):
    """Remove zero-cone variables (fixed at 0); their slacks are recovered later."""
    keep_blocks = []
    keep_cols = []
    zero_cols = []
    offset = 0
    for blk in prog.cones:
        rng = np.arange(offset, offset + blk.dim)
        if blk.kind == "zero":
            zero_cols.append(rng)
        else:
            keep_blocks.append(blk)
            keep_cols.append(rng)
        offset += blk.dim
    keep = np.concatenate(keep_cols) if keep_cols else np.zeros(0, dtype=int)
    zero = np.concatenate(zero_cols) if zero_cols else np.zeros(0, dtype=int)
    return keep_blocks, keep, zero


def _purify(ws, x, s, theta=1e3):
    """Round a near-optimal pair to exact blockwise complementarity.

    Interior-point iterates leave every inactive cone block with a small
    positive product, and with many blocks those products sum past the
    complementarity tolerance even though each block clearly shows which
    side is active.  Where one side dominates by ``theta``, the other is
    snapped to zero (zero belongs to every cone, so membership survives);
    slacks of free coordinates are exactly zero at any dual-feasible
    point, so their roundoff-level noise is dropped too.  Callers must
    re-measure the returned pair -- the snap is only accepted if the
    measured optimality conditions pass.
    """
    x = x.copy()
    s = s.copy()
    if ws.free_idx.size:
        s[ws.free_idx] = 0.0
    if ws.pos_idx.size:
        xi = x[ws.pos_idx]
        si = s[ws.pos_idx]
        x[ws.pos_idx] = np.where(si > theta * xi, 0.0, xi)
        s[ws.pos_idx] = np.where(xi > theta * si, 0.0, si)
    for _, idx in ws.soc_groups:
        xn = np.linalg.norm(x[idx], axis=1)
        sn = np.linalg.norm(s[idx], axis=1)
        x[idx[sn > theta * xn]] = 0.0
        s[idx[xn > theta * sn]] = 0.0
    if ws.psd_idx.shape[0]:
        xn = np.linalg.norm(x[ws.psd_idx], axis=1)
        sn = np.linalg.norm(s[ws.psd_idx], axis=1)
        x[ws.psd_idx[sn > theta * xn]] = 0.0
        s[ws.psd_idx[xn > theta * sn]] = 0.0
    return x, s


def _refine_farkas(A, AT, b, ws, y, s, feas_tol, rounds=50):
    """Polish a primal-infeasibility certificate by alternating projection.

    The certificates form the set {(y, s): A^T y + s = 0, <b, y> = 1,
    s in the dual cone} -- an affine subspace intersected with a convex
    cone.  Interior-point iterates approach it only as fast as their own
    shrinking scale allows, which caps the achievable quality well above
    the requested tolerance; projecting back and forth between the two
    sets converges linearly whenever the intersection is nonempty (the
    program is strongly infeasible) and the start is near it.  Returns
    the best (residual, y, s) found, or None when no sensible projection
    exists.
    """
    by = float(b @ y)
    if not np.isfinite(by) or by <= 0.0:
        return None
    y = y / by
    s = s / by

    m = A.shape[0]
    M = (sp.identity(m, format="csc") + (A @ AT).tocsc())
    try:
        lu = spla.splu(M)
    except RuntimeError:
        return None
    Mb = lu.solve(b)
    bMb = float(b @ Mb)
    if not np.isfinite(bMb) or bMb <= 0.0:
        return None

    nb = max(1.0, float(np.linalg.norm(b)))
    best = None
    for _ in range(rounds):
        # nearest point of the affine set: minimize the move in (y, s)
        # subject to A^T y + s = 0 and <b, y> = 1, eliminating s
        u = lu.solve(y - A @ s)
        lam = (1.0 - float(b @ u)) / bMb
        y = u + lam * Mb
        # nearest admissible slack; free coordinates have dual {0}
        s = ws.project_into_cone(-(AT @ y))
        if ws.free_idx.size:
            s[ws.free_idx] = 0.0
        res = float(np.linalg.norm(AT @ y + s)) * nb
        if not np.isfinite(res):
            break
        if best is None or res < best[0]:
            best = (res, y.copy(), s.copy())
        if res <= feas_tol:
            break
    return best


def solve(
    prog: ConeProgram,
    *,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    delta: float = 1e-9,
    polish_iters: int = 0,
    log=None,
) -> ConicSolution:
    """Solve a cone program; ``log`` is an optional callable fed text lines.

    ``polish_iters`` keeps stepping for up to that many extra iterations after
    the tolerances are first met; complementarity keeps improving, which
    sharpens quantities recovered from near-boundary cone blocks.  The kept
    iterate only advances while the feasibility residuals stay within a
    small factor of their first-convergence values, so polish trades
    nothing away: it returns the most central iterate that is at least as
    feasible as the plain solve, and stops early once steps no longer
    qualify.
    """
    prog.validate()
    blocks, keep, zero = _split_zero_blocks(prog)
    if keep.size == 0:
        raise ValueError("program has no variables outside zero cones")

    A_full = sp.csr_matrix(prog.A, dtype=float)
    A = A_full[:, keep].tocsr()
    c = np.asarray(prog.c, dtype=float)[keep]
    b = np.asarray(prog.b, dtype=float)
    m, n = A.shape

    ws = ConeWorkspace(blocks)
    kkt = KKTSolver(A, delta=delta)
    x, s = ws.init_point()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    deg = ws.degree + 1

    norm_b = np.linalg.norm(b)
    norm_c = np.linalg.norm(c)

    status, message = "MaxIter", "iteration limit reached"
    pres = dres = relgap = np.inf
    it = 0
    bumps = 0
    tiny_steps = 0
    best = None  # most advanced qualifying iterate, during polish
    pres0 = dres0 = np.inf  # residuals when the tolerances were first met
    polish_used = 0
    polish_stale = 0
    best_pinf = np.inf  # sharpest Farkas certificate seen, for refinement
    cert_y = cert_s = None
    best_score = np.inf  # most nearly optimal iterate seen, for the rescue
    best_pt = None

    def finish(status, message, iterations):
        nonlocal pres, dres, relgap, x, y, s, tau
        if status in ("NumericalFailure", "MaxIter") and best is not None:
            # the polish phase ground to a halt; hand back the best point
            x, y, s, tau = best
            status = "Optimal"
            message = f"converged ({message})"
        if tau > 1e-100 and status != "Infeasible":
            xt, yt, st = x / tau, y / tau, s / tau
        else:
            xt, yt, st = x, y, s
        if status in ("NumericalFailure", "MaxIter"):
            # a step may fail only after the iterate already entered the
            # target region (convergence is tested at iteration start), or
            # with nothing left in the way but the inactive blocks' residual
            # products, or after later junk steps degraded a good iterate:
            # re-test the final point, its purified rounding, and the best
            # iterate seen (plus rounding), and report honestly whichever
            # passes first
            px, ps = _purify(ws, xt, st)
            candidates = [(xt, yt, st), (px, yt, ps)]
            if best_pt is not None:
                bx, by_, bs, bt = best_pt
                bxt, byt, bst = bx / bt, by_ / bt, bs / bt
                ppx, pps = _purify(ws, bxt, bst)
                candidates += [(bxt, byt, bst), (ppx, byt, pps)]
            for tag, (cand_x, cand_y, cand_s) in zip(
                ("final", "final+purify", "best", "best+purify"), candidates
            ):
                pc = float(c @ cand_x)
                dc = float(b @ cand_y)
                cp = np.linalg.norm(A @ cand_x - b) / (1.0 + norm_b)
                cd = np.linalg.norm(
                    kkt.AT @ cand_y + cand_s - c) / (1.0 + norm_c)
                cg = abs(pc - dc) / max(1.0, abs(pc))
                cc = float(cand_x @ cand_s) / max(1.0, abs(pc))
                if log is not None:
                    log(
                        f"rescue {tag}: pres {cp:.3e}  dres {cd:.3e}  "
                        f"gap {cg:.3e}  compl {cc:.3e}"
                    )
                if (
                    cp <= feas_tol and cd <= feas_tol
                    and cg <= gap_tol and cc <= gap_tol
                ):
                    xt, yt, st = cand_x, cand_y, cand_s
                    status = "Optimal"
                    message = f"converged ({message})"
                    break
        if status in ("NumericalFailure", "MaxIter") and best_pinf < 1e2:
            # the run stalled while homing in on an infeasibility ray; the
            # sharpest certificate seen usually polishes to full tolerance
            ref = _refine_farkas(A, kkt.AT, b, ws, cert_y, cert_s, feas_tol)
            if ref is not None and ref[0] <= feas_tol:
                status = "Infeasible"
                message = "primal infeasible (Farkas certificate in y, s)"
                xt = np.zeros_like(xt)
                yt, st = ref[1], ref[2]
        if status == "Optimal":
            # polish: project the returned pair onto the cone (the move is at
            # roundoff scale) and report metrics for what is returned
            xt = ws.project_into_cone(xt)
            st = ws.project_into_cone(st)
            pcost = float(c @ xt)
            dcost = float(b @ yt)
            pres = np.linalg.norm(A @ xt - b) / (1.0 + norm_b)
            dres = np.linalg.norm(kkt.AT @ yt + st - c) / (1.0 + norm_c)
            relgap = abs(pcost - dcost) / max(1.0, abs(pcost))
        x_out = np.zeros(prog.n_vars)
        s_out = np.zeros(prog.n_vars)
        x_out[keep] = xt
        s_out[keep] = st
        if zero.size:
            if status == "Infeasible":
                # certificate convention: A^T y + s vanishes everywhere
                s_out[zero] = -(A_full[:, zero].T @ yt)
            else:
                s_out[zero] = (
                    np.asarray(prog.c, dtype=float)[zero]
                    - A_full[:, zero].T @ yt
                )
        return ConicSolution(
            x=x_out, y=yt, s=s_out, status=status,
            rel_gap=float(relgap), primal_res=float(pres),
            dual_res=float(dres), iterations=iterations, message=message,
        )

    for it in range(1, max_iter + 1):
        # the embedding is positively homogeneous, so the iterate can be
        # rescaled freely; keep it at O(1) so the endgame arithmetic stays
        # healthy.  The rescale matters most when the problem is infeasible:
        # the iterate then drifts toward a solution ray whose own scale may
        # be tiny, and the Farkas certificate quality is floored by
        # ||c||*tau relative to that scale, so certifying to tight
        # tolerances needs the ray pinned at O(1).
        scale = max(tau, kappa, np.abs(x).max(initial=0.0),
                    np.abs(y).max(initial=0.0), np.abs(s).max(initial=0.0))
        if scale > 1e4 or scale < 1e-2:
            x /= scale
            y /= scale
            s /= scale
            tau /= scale
            kappa /= scale

        # residuals of the homogeneous model
        Rp = A @ x - b * tau
        Rd = c * tau - kkt.AT @ y - s
        Rg = float(b @ y - c @ x - kappa)

        # normalized iterate metrics
        xt, yt, st = x / tau, y / tau, s / tau
        pcost = float(c @ xt)
        dcost = float(b @ yt)
        pres = np.linalg.norm(A @ xt - b) / (1.0 + norm_b)
        dres = np.linalg.norm(kkt.AT @ yt + st - c) / (1.0 + norm_c)
        relgap = abs(pcost - dcost) / max(1.0, abs(pcost))
        compl = float(xt @ st) / max(1.0, abs(pcost))
        mu = (float(x @ s) + tau * kappa) / deg

        by = float(b @ y)
        cx = float(c @ x)
        pinf = (
            np.linalg.norm(kkt.AT @ y + s) * max(1.0, norm_b) / by
            if by > 0.0 else np.inf
        )
        dinf = (
            np.linalg.norm(A @ x) * max(1.0, norm_c) / (-cx)
            if cx < 0.0 else np.inf
        )

        if log is not None:
            log(
                f"iter {it - 1:3d}  pcost {pcost:+.9e}  dcost {dcost:+.9e}  "
                f"gap {relgap:.3e}  pres {pres:.3e}  dres {dres:.3e}  "
                f"mu {mu:.3e}  tau {tau:.3e}  kappa {kappa:.3e}  "
                f"pinf {pinf:.3e}  dinf {dinf:.3e}"
            )

        # complementarity is left out of the score: the rescue in finish()
        # purifies it away, so the snapshot worth keeping is the most
        # feasible one with the smallest gap
        score = max(pres / feas_tol, dres / feas_tol, relgap / gap_tol)
        if score < best_score:
            best_score = score
            best_pt = (x.copy(), y.copy(), s.copy(), tau)

        converged = (
            pres <= feas_tol and dres <= feas_tol
            and relgap <= gap_tol and compl <= gap_tol
        )
        if best is None:
            if converged:
                if polish_iters <= 0:
                    return finish("Optimal", "converged", it - 1)
                best = (x.copy(), y.copy(), s.copy(), tau)
                # feasibility may not erode during polish beyond a small
                # factor, floored at the eigensolver noise level
                pres0 = max(10.0 * pres, 3e-11)
                dres0 = max(10.0 * dres, 3e-11)
        else:
            polish_used += 1
            if converged and pres <= pres0 and dres <= dres0:
                best = (x.copy(), y.copy(), s.copy(), tau)
                polish_stale = 0
            else:
                # the step traded feasibility for centrality; don't keep it
                polish_stale += 1
            if polish_used >= polish_iters or polish_stale >= 3:
                return finish("NumericalFailure", "polish ended", it - 1)

        if pinf < best_pinf:
            best_pinf = pinf
            cert_y, cert_s = y.copy(), s.copy()
        if pinf <= feas_tol:
            status = "Infeasible"
            message = "primal infeasible (Farkas certificate in y, s)"
            return finish(status, message, it - 1)
        if dinf <= feas_tol:
            status = "Infeasible"
            message = "dual infeasible / primal unbounded (certificate in x)"
            return finish(status, message, it - 1)

        if not ws.update_scaling(x, s):
            status, message = "NumericalFailure", "iterate left the cone interior"
            return finish(status, message, it - 1)

        wm2 = ws.wm2_matrix()
        while True:
            try:
                kkt.factor(wm2)
                break
            except RuntimeError as exc:
                bumps += 1
                if bumps > _MAX_DELTA_BUMPS:
                    status, message = "NumericalFailure", str(exc)
                    return finish(status, message, it - 1)
                kkt.delta *= 100.0

        try:
            dx2, dy2 = kkt.solve(c, b)
        except RuntimeError as exc:
            status, message = "NumericalFailure", str(exc)
            return finish(status, message, it - 1)
        denom = float(b @ dy2 - c @ dx2) + kappa / tau
        lam_sq = ws.lam_sq()

        def newton_step(eta, mu_t, corr, corr_tk):
            """One KKT pass: residual weight ``eta``, product target ``mu_t``."""
            dc = ws.jordan_solve_lam(mu_t * ws.e - lam_sq - corr)
            winv_dc = ws.apply_Winv(dc)
            hx = -eta * Rd + winv_dc
            hy = -eta * Rp
            dx1, dy1 = kkt.solve(-hx, hy)
            v = mu_t - tau * kappa - corr_tk
            dtau = (
                -eta * Rg + v / tau - float(b @ dy1) + float(c @ dx1)
            ) / denom
            dx = dx1 + dtau * dx2
            dy = dy1 + dtau * dy2
            ds = winv_dc - wm2 @ dx
            dkappa = (v - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        def admissible(dx, dy, ds, dtau, dkappa):
            """Largest fraction-to-boundary step, or None if none exists.

            The scaled-space step bound inherits the scaling's roundoff, so
            the true cone margins are verified and the step backtracked if it
            overshoots; the tolerance sits above the closed-form eigensolver
            noise floor (~1e-11 of the block scale), else deep-endgame
            iterates whose true boundary distance is below that floor get
            falsely rejected.
            """
            alpha_max = min(
                ws.max_step(ws.apply_Winv(dx)),
                ws.max_step(ws.apply_W(ds)),
                tau / -dtau if dtau < 0.0 else np.inf,
                kappa / -dkappa if dkappa < 0.0 else np.inf,
            )
            # the multipliers are free, so the cone margins never bound
            # them; cap the step so one ill-conditioned KKT solve cannot
            # catapult y (and with it the dual residual)
            dy_max = float(np.max(np.abs(dy), initial=0.0))
            if dy_max > 0.0:
                y_max = float(np.max(np.abs(y), initial=0.0))
                alpha_max = min(alpha_max, 10.0 * (1.0 + y_max) / dy_max)
            alpha = min(1.0, _STEP_FRACTION * alpha_max)
            if not np.isfinite(alpha) or alpha <= 0.0:
                return None
            for _ in range(30):
                x_new = x + alpha * dx
                s_new = s + alpha * ds
                ok_x = ws.residual_in_cone(x_new) >= -3e-11 * max(
                    1.0, float(np.max(np.abs(x_new))))
                ok_s = ws.residual_in_cone(s_new) >= -3e-11 * max(
                    1.0, float(np.max(np.abs(s_new))))
                if ok_x and ok_s:
                    return x_new, s_new, alpha
                alpha *= 0.8
            return None

        try:
            # predictor (affine) direction
            dxa, dya, dsa, dta, dka = newton_step(1.0, 0.0, 0.0, 0.0)
            ux_a = ws.apply_Winv(dxa)
            us_a = ws.apply_W(dsa)
            alpha_aff = min(
                1.0,
                ws.max_step(ux_a),
                ws.max_step(us_a),
                tau / -dta if dta < 0.0 else np.inf,
                kappa / -dka if dka < 0.0 else np.inf,
            )
            gamma = float(np.clip((1.0 - alpha_aff) ** 3, 0.0, 1.0))

            # corrector direction
            corr = ws.jordan_prod(ux_a, us_a)
            corr_tk = dta * dka
            dx, dy, ds, dtau, dkappa = newton_step(
                1.0 - gamma, gamma * mu, corr, corr_tk)

            step = admissible(dx, dy, ds, dtau, dkappa)
            if step is None:
                # the combined direction is unusable; fall back to a pure
                # centering step, which restores the margins the next
                # predictor needs
                dx, dy, ds, dtau, dkappa = newton_step(0.0, mu, 0.0, 0.0)
                step = admissible(dx, dy, ds, dtau, dkappa)
        except RuntimeError as exc:
            status, message = "NumericalFailure", str(exc)
            return finish(status, message, it - 1)
        if step is None:
            status, message = "NumericalFailure", "no admissible step"
            return finish(status, message, it - 1)
        x_new, s_new, alpha = step

        if alpha < 1e-9:
            tiny_steps += 1
            if tiny_steps >= 5:
                status, message = "NumericalFailure", "step lengths collapsed"
                return finish(status, message, it - 1)
        else:
            tiny_steps = 0

        x = x_new
        y = y + alpha * dy
        s = s_new
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

        if not (
            np.all(np.isfinite(x)) and np.all(np.isfinite(s))
            and np.all(np.isfinite(y)) and np.isfinite(tau) and np.isfinite(kappa)
        ):
            status, message = "NumericalFailure", "non-finite iterate"
            return finish(status, message, it)
        if tau <= 1e-100 and kappa <= 1e-100:
            status, message = "NumericalFailure", "tau and kappa both collapsed"
            return finish(status, message, it)

    return finish(status, message, max_iter)
