"""Self-contained interior-point solver for smooth convex programs.

Solves

    minimize    f0(x)
    subject to  f_i(x) <= 0,  i = 1..m   (smooth convex)
                A x = b

with a feasible-start log-barrier method: for an increasing sequence of
barrier weights t, damped Newton minimizes t f0(x) - sum_i log(-f_i(x))
subject to the equalities, with backtracking on the barrier value (trial
points outside the strict interior evaluate to +inf and are rejected, so
every iterate stays strictly feasible).  The returned multipliers
lam_i = 1 / (t (-f_i)) certify the duality gap m/t, and the reported
residuals are evaluated at the returned point.

The starting point must be strictly feasible for the inequalities and
satisfy the equalities; callers own its construction.

Problems are described by an objective and a list of constraint "blocks".
A block bundles a family of structurally identical constraints so values,
Jacobians and weighted Hessians evaluate vectorized:

    block.size                -> number of constraints in the family
    block.value(x)            -> (size,) constraint values
    block.jac_coo(x)          -> (rows, cols, vals) triplets, rows in [0, size)
    block.hess_coo(x, w)      -> (rows, cols, vals) of sum_i w_i * hess f_i(x)

The objective exposes value/grad/hess_coo.  Hessian triplets with repeated
indices are summed, so blocks can emit overlapping contributions freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class NumericalBreakdown(Exception):
    """The Newton system stayed rank-deficient beyond regularization."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class MaxIterations(Exception):
    """Newton iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class KktSolution:
    """Primal-dual point returned by the solver, with its actual residuals."""

    x: np.ndarray
    lam: np.ndarray  # inequality multipliers, >= 0
    nu: np.ndarray  # equality multipliers
    slacks: np.ndarray  # -f(x) at the returned point
    objective: float
    primal_residual: float  # max inequality violation and |Ax - b|
    dual_residual: float  # inf-norm of the stationarity residual
    comp_gap: float  # sum_i lam_i (-f_i) / m
    status: str  # "converged" | "max_iterations"
    iterations: int


class QuadraticObjective:
    """f0(x) = 0.5 x^T P x + q^T x with sparse symmetric P."""

    def __init__(self, p_mat, q):
        self.p = sp.csr_matrix(p_mat)
        self.q = np.asarray(q, dtype=float)
        coo = sp.coo_matrix(self.p)
        self._rows, self._cols, self._vals = coo.row, coo.col, coo.data

    def value(self, x):
        return float(0.5 * x @ (self.p @ x) + self.q @ x)

    def grad(self, x):
        return self.p @ x + self.q

    def hess_coo(self, x):
        return self._rows, self._cols, self._vals


class AffineBlock:
    """Constraint family G x - h <= 0."""

    def __init__(self, g_mat, h):
        self.g = sp.csr_matrix(g_mat)
        self.h = np.asarray(h, dtype=float)
        self.size = self.g.shape[0]
        coo = sp.coo_matrix(self.g)
        self._rows, self._cols, self._vals = coo.row, coo.col, coo.data
        self._empty = (np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0))

    def value(self, x):
        return self.g @ x - self.h

    def jac_coo(self, x):
        return self._rows, self._cols, self._vals

    def hess_coo(self, x, w):
        return self._empty


@dataclass
class Program:
    """A smooth convex program in block form (see module docstring)."""

    n: int
    objective: object
    ineq_blocks: list
    a_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None

    @property
    def n_ineq(self) -> int:
        return sum(blk.size for blk in self.ineq_blocks)

    def ineq_value(self, x) -> np.ndarray:
        if not self.ineq_blocks:
            return np.empty(0)
        return np.concatenate([blk.value(x) for blk in self.ineq_blocks])

    def ineq_jacobian(self, x) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        offset = 0
        for blk in self.ineq_blocks:
            r, c, v = blk.jac_coo(x)
            rows.append(np.asarray(r) + offset)
            cols.append(c)
            vals.append(v)
            offset += blk.size
        if not rows:
            return sp.csr_matrix((0, self.n))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, self.n)).tocsr()

    def ineq_hessian(self, x, w) -> sp.csr_matrix:
        """sum_i w_i hess f_i as a sparse matrix (objective not included)."""
        rows = [np.empty(0, dtype=int)]
        cols = [np.empty(0, dtype=int)]
        vals = [np.empty(0)]
        offset = 0
        for blk in self.ineq_blocks:
            r, c, v = blk.hess_coo(x, w[offset:offset + blk.size])
            rows.append(np.asarray(r))
            cols.append(np.asarray(c))
            vals.append(np.asarray(v, dtype=float))
            offset += blk.size
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n)).tocsr()

    def objective_hessian(self, x) -> sp.csr_matrix:
        r, c, v = self.objective.hess_coo(x)
        return sp.coo_matrix((np.asarray(v, dtype=float), (r, c)),
                             shape=(self.n, self.n)).tocsr()


def _kkt_report(prog, x, t, nu_over_t, best_iter):
    """Exact residuals at x with the barrier's implied multipliers."""
    f = prog.ineq_value(x)
    lam = 1.0 / (t * np.maximum(-f, 1e-300))
    jac = prog.ineq_jacobian(x)
    r_dual = prog.objective.grad(x) + (jac.T @ lam if lam.size else 0.0)
    if prog.a_eq is not None:
        r_dual = r_dual + prog.a_eq.T @ nu_over_t
        r_eq = float(np.abs(prog.a_eq @ x - prog.b_eq).max(initial=0.0))
    else:
        r_eq = 0.0
    pr = max(float(f.max(initial=-np.inf)), r_eq, 0.0)
    dr = float(np.abs(r_dual).max(initial=0.0))
    gap = float(lam @ (-f) / len(f)) if len(f) else 0.0
    return KktSolution(x.copy(), lam, nu_over_t.copy(), -f, prog.objective.value(x),
                       pr, dr, gap, "converged", best_iter)


def solve_program(prog: Program, x0: np.ndarray, tol: float = 1e-7,
                  max_iters: int = 400, reg: float = 1e-10,
                  t0: float | None = None, t_factor: float = 30.0) -> KktSolution:
    """Barrier method; x0 must be strictly feasible (checked).

    Stops when the certified duality gap per constraint and the stationarity
    residual both fall below tol.  Residuals are measured on the program as
    given, so callers wanting "scaled units" hand in a scaled program.
    Raises MaxIterations (carrying the best iterate) when the Newton budget
    runs out, NumericalBreakdown when the KKT system cannot be factored.
    """
    x = np.asarray(x0, dtype=float).copy()
    m = prog.n_ineq
    p = prog.a_eq.shape[0] if prog.a_eq is not None else 0

    if p:
        # the barrier line search cannot repair equality infeasibility (it
        # would have to climb the objective); project the start instead
        r0 = prog.a_eq @ x - prog.b_eq
        if np.abs(r0).max(initial=0.0) > 1e-12:
            gram = (prog.a_eq @ prog.a_eq.T).tocsc()
            corr = splu(gram + sp.identity(p) * 1e-12).solve(r0)
            x = x - prog.a_eq.T @ corr

    f = prog.ineq_value(x)
    if m and f.max() >= 0.0:
        raise NumericalBreakdown(
            f"barrier start is not strictly feasible (max f = {f.max():.3e})")

    def barrier_value(t, xq, margin_floor=None):
        fq = prog.ineq_value(xq)
        if m and fq.max() >= 0.0:
            return np.inf, fq
        if margin_floor is not None and m and np.any(-fq < margin_floor):
            return np.inf, fq  # fraction-to-boundary: no wall-crashing steps
        val = t * prog.objective.value(xq)
        if m:
            val -= float(np.sum(np.log(-fq)))
        return val, fq

    t = t0 if t0 is not None else max(m, 1.0)
    nu = np.zeros(p)
    newton_used = 0
    best = None
    stalled_stages = 0

    while True:
        # center at the current t: damped Newton until the stationarity
        # residual of the barrier problem is small relative to t (so the
        # implied dual residual |grad_t + A^T nu| / t meets the tolerance)
        centered = False
        for _ in range(80):
            if newton_used >= max_iters:
                best = best if best is not None \
                    else _kkt_report(prog, x, t, nu / t, newton_used)
                best.status = "max_iterations"
                raise MaxIterations(f"newton budget {max_iters} exhausted", best)
            f = prog.ineq_value(x)
            d = 1.0 / np.maximum(-f, 1e-300) if m else np.empty(0)
            jac = prog.ineq_jacobian(x) if m else None
            grad_t = t * prog.objective.grad(x)
            if m:
                grad_t = grad_t + jac.T @ d
            stat = grad_t + (prog.a_eq.T @ nu if p else 0.0)
            r_eq = prog.a_eq @ x - prog.b_eq if p else np.empty(0)
            if np.abs(stat).max(initial=0.0) <= 0.5 * tol * t \
                    and np.abs(r_eq).max(initial=0.0) <= tol:
                centered = True
                break

            # Augmented Newton system for the barrier subproblem: introducing
            # w = D^2 J dx keeps the matrix entries on the scale of d rather
            # than d^2, which the condensed form J^T D^2 J would square.
            # Single-entry rows (bounds) contribute exactly (d a)^2 on the
            # Hessian diagonal and need not enter the augmented block.
            h0 = t * prog.objective_hessian(x)
            if m:
                h0 = h0 + prog.ineq_hessian(x, d)
                nnz_row = np.diff(jac.indptr)
                single = np.flatnonzero(nnz_row == 1)
                if single.size:
                    scols = jac.indices[jac.indptr[single]]
                    svals = jac.data[jac.indptr[single]]
                    diag_add = np.zeros(prog.n)
                    np.add.at(diag_add, scols, (d[single] * svals) ** 2)
                    h0 = h0 + sp.diags(diag_add)
                    multi = nnz_row != 1
                    jac_aug = jac[multi]
                    d_aug = d[multi]
                else:
                    jac_aug, d_aug = jac, d
                m_aug = jac_aug.shape[0]
            else:
                m_aug = 0

            # the slack block -1/d^2 is strictly negative on its own and must
            # not be floored: near walls its entries are far below any fixed
            # regularization, which would wreck the directions
            rows = [[h0, jac_aug.T if m_aug else None, prog.a_eq.T if p else None]]
            if m_aug:
                rows.append([jac_aug, -sp.diags(1.0 / (d_aug * d_aug)), None])
            if p:
                rows.append([prog.a_eq, None, sp.csr_matrix((p, p))])
            keep = [0] + ([1] if m_aug else []) + ([2] if p else [])
            exact = sp.bmat([[row[j] for j in keep] for row in rows],
                            format="csr")

            rhs = np.concatenate([-grad_t] + ([np.zeros(m_aug)] if m_aug else [])
                                 + ([-r_eq] if p else []))
            delta = max(reg, 1e-12)
            lu = None
            rhs_norm = float(np.abs(rhs).max(initial=0.0)) + 1e-300
            for _ in range(6):
                try:
                    # the equality block's bias is amplified ~t by the Schur
                    # sensitivity, so its regularization shrinks with t
                    reg_diag = np.concatenate(
                        [np.full(prog.n, delta), np.zeros(m_aug),
                         np.full(p, -delta / max(t, 1.0))])
                    lu = splu((exact + sp.diags(reg_diag)).tocsc())
                    sol = lu.solve(rhs)
                    # refine against the unregularized system so the delta
                    # bias does not cap the achievable accuracy; stop if the
                    # correction stops contracting
                    prev = np.inf
                    best_sol = sol
                    for _ in range(12):
                        resid = rhs - exact @ sol
                        r_now = float(np.abs(resid).max(initial=0.0))
                        if r_now <= 1e-12 * rhs_norm:
                            best_sol = sol
                            break
                        if r_now >= prev:  # diverging: keep the best seen
                            sol = best_sol
                            break
                        prev = r_now
                        best_sol = sol
                        sol = sol + lu.solve(resid)
                    if np.all(np.isfinite(sol)):
                        break
                except RuntimeError:
                    pass
                lu = None
                delta *= 100.0
            if lu is None:
                raise NumericalBreakdown("KKT system is singular beyond regularization",
                                         best)
            dx = sol[:prog.n]
            if p:
                nu = sol[prog.n + m_aug:]
            newton_used += 1

            if np.all(x + dx == x):
                centered = True  # sub-ulp correction: the f64 centering floor
                break

            decrement2 = float(dx @ (h0 @ dx))
            if m:
                jdx = jac @ dx
                decrement2 += float(np.sum((d * jdx) ** 2))
            decrement2 = max(decrement2, 0.0)

            # start the backtracking just inside the linearized walls, and
            # never let one step collapse a margin below a fraction of its
            # current value (fraction-to-the-boundary rule)
            alpha = 1.0
            floor = None
            if m:
                rising = jdx > 0
                if np.any(rising):
                    alpha = min(1.0, 0.995 * float(np.min(-f[rising] / jdx[rising])))
                floor = 5e-3 * (-f)
            base, _ = barrier_value(t, x)
            accepted = False
            for _ in range(50):
                trial, _ = barrier_value(t, x + alpha * dx, floor)
                if trial <= base - 0.25 * alpha * decrement2 + 1e-12 * abs(base):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break  # numerically centered: fall through to the t update
            x = x + alpha * dx

        report = _kkt_report(prog, x, t, nu / t, newton_used)
        improved = best is None or max(report.primal_residual, report.dual_residual,
                                       report.comp_gap) < max(best.primal_residual,
                                                              best.dual_residual,
                                                              best.comp_gap)
        if improved:
            best = report
        if report.comp_gap <= tol and report.dual_residual <= tol \
                and report.primal_residual <= tol:
            return report
        if m == 0:
            if max(report.primal_residual, report.dual_residual) <= tol:
                return report
            if newton_used >= max_iters:
                report.status = "max_iterations"
                raise MaxIterations("no convergence on equality-constrained problem",
                                    report)
            continue
        if not centered and not improved:
            stalled_stages += 1
            if stalled_stages >= 2:
                # escalating t once centering keeps failing only loses
                # accuracy: this is the precision floor in double precision
                best.status = "max_iterations"
                raise MaxIterations("centering stalled at the precision floor", best)
        else:
            stalled_stages = 0
        t *= t_factor
