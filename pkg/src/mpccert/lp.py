"""Dense bounded-variable simplex solver.

Solves  min c'x  s.t.  Aeq x = beq,  Aineq x <= bineq,  lb <= x <= ub.

Internally every row carries a slack column (equality slacks fixed to
[0, 0]), so the working form is A_full xbar = b with simple bounds on
xbar.  The solver keeps an explicit basis inverse with product-form
updates and supports warm restarts after bound changes, which is what
the branch-and-bound driver relies on: child nodes only tighten variable
bounds, so the current basis stays usable and a handful of dual simplex
pivots restore feasibility.

Primal simplex uses Dantzig pricing with an automatic switch to Bland's
rule after a degeneracy streak; the dual simplex breaks ratio-test ties
by lowest column index.  Both rules make the pivot sequence (and hence
every verdict built on top) deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaxIterationsError, SingularityError

# variable status codes
BASIC = 0
AT_LOWER = 1
AT_UPPER = 2
NB_FREE = 3  # nonbasic free variable, parked at zero

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-10
REFACTOR_EVERY = 300


@dataclass
class LpSolution:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float = np.nan
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    farkas: np.ndarray | None = None  # row multipliers certifying infeasibility
    iterations: int = 0

    def dual_objective(self, lb, ub, beq, bineq) -> float:
        """Lower bound on the optimum implied by the returned duals."""
        g = 0.0
        if self.duals_eq is not None and np.size(beq):
            g -= float(self.duals_eq @ beq)
        if self.duals_ineq is not None and np.size(bineq):
            g -= float(self.duals_ineq @ bineq)
        d = self.reduced_costs
        if d is not None:
            lb = np.asarray(lb, dtype=float)
            ub = np.asarray(ub, dtype=float)
            for j in range(len(lb)):
                if abs(d[j]) <= 1e-11:
                    continue
                bound = lb[j] if d[j] > 0 else ub[j]
                if np.isfinite(bound):
                    g += d[j] * bound
        return g


class _BasisReset(Exception):
    """Internal: the basis went numerically singular, restart from slacks."""


class BoundedSimplex:
    """Reusable simplex workspace over a fixed constraint matrix.

    Bounds may change between solves (:meth:`set_bounds`); the constraint
    matrix and objective stay fixed for the lifetime of the object.  Not
    thread-safe: one instance per thread.
    """

    def __init__(self, c, Aeq, beq, Aineq, bineq, lb, ub):
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        Aeq = np.zeros((0, n)) if Aeq is None else np.asarray(Aeq, dtype=float).reshape(-1, n)
        Aineq = np.zeros((0, n)) if Aineq is None else np.asarray(Aineq, dtype=float).reshape(-1, n)
        beq = np.zeros(0) if beq is None else np.asarray(beq, dtype=float).ravel()
        bineq = np.zeros(0) if bineq is None else np.asarray(bineq, dtype=float).ravel()
        if Aeq.shape[0] != beq.size or Aineq.shape[0] != bineq.size:
            raise ValueError("row count mismatch between matrices and right-hand sides")

        self.n = n
        self.meq = Aeq.shape[0]
        self.mineq = Aineq.shape[0]
        self.m = self.meq + self.mineq
        body = np.vstack([Aeq, Aineq]) if self.m else np.zeros((0, n))
        b = np.concatenate([beq, bineq])
        # rows are kept in the caller's units: feasibility tolerances must
        # stay absolute, otherwise slop on big-M rows (scaled by 1e4) could
        # fake small strict-inequality thresholds elsewhere in the model
        self.row_scale = np.ones(self.m)
        self.A = np.hstack([body, np.eye(self.m)])
        self.b = b
        self.ntot = n + self.m

        self.c_true = np.zeros(self.ntot)
        self.c_true[:n] = c
        # deterministic cost perturbation: breaks the huge reduced-cost tie
        # groups that make degenerate duals cycle; orders of magnitude below
        # every tolerance used on objectives downstream
        rng = np.random.default_rng(0x5EED)
        self.c = self.c_true + 1e-10 * (1.0 + np.abs(self.c_true)) \
            * rng.uniform(0.5, 1.5, self.ntot)

        self.lb = np.full(self.ntot, -np.inf)
        self.ub = np.full(self.ntot, np.inf)
        self.lb[:n] = np.asarray(lb, dtype=float).ravel()
        self.ub[:n] = np.asarray(ub, dtype=float).ravel()
        # slack bounds: equalities pinned to zero, inequalities nonnegative
        self.lb[n:n + self.meq] = 0.0
        self.ub[n:n + self.meq] = 0.0
        self.lb[n + self.meq:] = 0.0
        self.ub[n + self.meq:] = np.inf

        self.scale = 1.0 + (float(np.abs(self.b).max()) if self.m else 0.0)
        self._install_slack_basis()
        self.total_iterations = 0

    # ------------------------------------------------------------------
    # basis bookkeeping

    def _install_slack_basis(self):
        self.basis = np.arange(self.n, self.ntot)
        self.vstat = np.empty(self.ntot, dtype=np.int8)
        finite_lb = np.isfinite(self.lb[:self.n])
        finite_ub = np.isfinite(self.ub[:self.n])
        st = np.full(self.n, NB_FREE, dtype=np.int8)
        st[finite_ub] = AT_UPPER
        st[finite_lb] = AT_LOWER  # prefer lower bound when both finite
        self.vstat[:self.n] = st
        self.vstat[self.n:] = BASIC
        self.Binv = np.eye(self.m)
        self._pivots_since_refactor = 0
        self._update_buf = None

    def reset_basis(self):
        """Drop the current basis and restart from the all-slack basis."""
        self._install_slack_basis()

    def refresh(self):
        """Recompute the basis inverse; falls back to the slack basis."""
        try:
            self._refactorize()
        except _BasisReset:
            self._install_slack_basis()

    def _nonbasic_values(self) -> np.ndarray:
        """Full-length vector: nonbasic vars at their parked value, basic 0."""
        v = np.where(self.vstat == AT_LOWER, self.lb,
                     np.where(self.vstat == AT_UPPER, self.ub, 0.0))
        v[self.vstat == BASIC] = 0.0
        v[self.vstat == NB_FREE] = 0.0
        return v

    def _compute_xB(self, refine: bool = False) -> np.ndarray:
        xN = self._nonbasic_values()
        nz = np.flatnonzero(xN)
        rhs = self.b - self.A[:, nz] @ xN[nz] if nz.size else self.b.copy()
        xB = self.Binv @ rhs
        if refine:
            B = self.A[:, self.basis]
            xB += self.Binv @ (rhs - B @ xB)
        return xB

    def _refactorize(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as e:
            raise _BasisReset from e
        # near-singular inverses come back from LAPACK without complaint;
        # probe a few columns before trusting the factorization
        idx = np.arange(0, self.m, max(1, self.m // 4))
        probe = B @ self.Binv[:, idx]
        expect = np.zeros_like(probe)
        expect[idx, np.arange(idx.size)] = 1.0
        if not np.all(np.isfinite(probe)) or np.abs(probe - expect).max() > 1e-6:
            raise _BasisReset
        self._pivots_since_refactor = 0

    def _pivot_ok(self, r: int, w: np.ndarray) -> bool:
        """Stability test: bound the growth a pivot can inject into Binv."""
        wr = abs(w[r])
        return wr >= 1e-10 and wr >= 1e-9 * float(np.abs(w).max())

    def _pivot(self, r: int, j_enter: int, w: np.ndarray) -> bool:
        """Replace the basic variable in row r by column j_enter.

        Returns True when the inverse was rebuilt from scratch (callers then
        refresh any incrementally maintained quantities).
        """
        wr = w[r]
        row = self.Binv[r, :] / wr
        corr = w.copy()
        corr[r] = 0.0
        if self._update_buf is None or self._update_buf.shape != self.Binv.shape:
            self._update_buf = np.empty_like(self.Binv)
        np.multiply(corr[:, None], row[None, :], out=self._update_buf)
        np.subtract(self.Binv, self._update_buf, out=self.Binv)
        self.Binv[r, :] = row
        self.basis[r] = j_enter
        self.vstat[j_enter] = BASIC
        self._pivots_since_refactor += 1
        if self._pivots_since_refactor >= REFACTOR_EVERY or \
                abs(self.Binv[r, :]).max() > 1e12:
            self._refactorize()
            return True
        return False

    # ------------------------------------------------------------------
    # public interface

    def set_bounds(self, j: int, lo: float, hi: float):
        """Change the bounds of structural variable j."""
        self.lb[j] = lo
        self.ub[j] = hi
        if self.vstat[j] == BASIC:
            return
        if self.vstat[j] == AT_LOWER and not np.isfinite(lo):
            self.vstat[j] = AT_UPPER if np.isfinite(hi) else NB_FREE
        elif self.vstat[j] == AT_UPPER and not np.isfinite(hi):
            self.vstat[j] = AT_LOWER if np.isfinite(lo) else NB_FREE
        elif self.vstat[j] == NB_FREE:
            if np.isfinite(lo):
                self.vstat[j] = AT_LOWER
            elif np.isfinite(hi):
                self.vstat[j] = AT_UPPER

    def get_bounds(self, j: int) -> tuple[float, float]:
        return float(self.lb[j]), float(self.ub[j])

    def solve(self, max_iter: int | None = None, feasibility_only: bool = False) -> LpSolution:
        """Dual simplex to primal feasibility, then primal simplex to optimality.

        ``feasibility_only`` skips the optimizing phase; feasibility-mode
        branch-and-bound nodes use it with a zero objective.
        """
        if max_iter is None:
            max_iter = 50 * (self.m + self.ntot) + 1000

        if np.any(self.lb > self.ub + 1e-12):
            return LpSolution(status="infeasible", iterations=0)

        for restart in range(4):
            iters = 0
            bland = restart > 0  # a reset must not replay the same pivot path
            try:
                status, it, farkas = self._dual_simplex(max_iter, bland=bland)
                iters += it
                if status == "infeasible":
                    self.total_iterations += iters
                    return LpSolution(status="infeasible", farkas=farkas, iterations=iters)

                if not feasibility_only:
                    status, it = self._primal_simplex(max_iter, bland=bland)
                    iters += it
                    if status == "unbounded":
                        self.total_iterations += iters
                        return LpSolution(status="unbounded", iterations=iters)
                    status, it, farkas = self._dual_simplex(max_iter, bland=bland)
                    iters += it
                    if status == "infeasible":
                        self.total_iterations += iters
                        return LpSolution(status="infeasible", farkas=farkas, iterations=iters)

                self.total_iterations += iters
                return self._extract_solution(iters)
            except _BasisReset:
                # numerically singular basis: restart clean from the slacks
                self.total_iterations += iters
                self._install_slack_basis()
        raise SingularityError("basis matrix kept going singular after restarts")

    # ------------------------------------------------------------------
    # solution extraction

    def _full_point(self, refine: bool = False) -> np.ndarray:
        x = self._nonbasic_values()
        x[self.basis] = self._compute_xB(refine=refine)
        return x

    def current_point(self, refine: bool = False) -> np.ndarray:
        return self._full_point(refine=refine)[:self.n].copy()

    def _extract_solution(self, iters: int) -> LpSolution:
        x = self._full_point(refine=True)
        y = self.c_true[self.basis] @ self.Binv
        d = self.c_true - y @ self.A
        y_orig = -y / self.row_scale  # duals in the caller's row units
        return LpSolution(
            status="optimal",
            x=x[:self.n].copy(),
            objective=float(self.c_true[:self.n] @ x[:self.n]),
            duals_eq=y_orig[:self.meq].copy(),
            duals_ineq=y_orig[self.meq:].copy(),
            reduced_costs=d[:self.n].copy(),
            iterations=iters,
        )

    # ------------------------------------------------------------------
    # dual simplex: restores primal feasibility of the basis while keeping
    # reduced-cost signs consistent with the nonbasic statuses

    def _dual_simplex(self, max_iter: int, bland: bool = False):
        iters = 0
        stall = 0
        if self.m == 0:
            return ("feasible", 0, None)
        d = None  # incrementally updated reduced costs
        last_refactor_count = self._pivots_since_refactor
        while True:
            if iters >= max_iter:
                raise MaxIterationsError("dual simplex exceeded iteration limit")
            if d is None or self._pivots_since_refactor < last_refactor_count:
                y = self.c[self.basis] @ self.Binv
                d = self.c - y @ self.A
            last_refactor_count = self._pivots_since_refactor
            xB = self._compute_xB()
            lbB = self.lb[self.basis]
            ubB = self.ub[self.basis]
            # violations measured relative to each bound's own magnitude so
            # large big-M rows cannot mask small absolute thresholds elsewhere
            with np.errstate(invalid="ignore"):
                below = np.where(np.isfinite(lbB), (lbB - xB) / (1.0 + np.abs(lbB)), -np.inf)
                above = np.where(np.isfinite(ubB), (xB - ubB) / (1.0 + np.abs(ubB)), -np.inf)
            viol = np.maximum(below, above)
            if viol.max() <= FEAS_TOL:
                return ("feasible", iters, None)
            if bland:
                # Bland: lowest-index violated basic variable leaves
                viol_rows = np.flatnonzero(viol > FEAS_TOL)
                r = int(viol_rows[np.argmin(self.basis[viol_rows])])
            else:
                r = int(np.argmax(viol))
            to_lower = below[r] >= above[r]

            rho = self.Binv[r, :] @ self.A
            nb = self.vstat != BASIC
            fixed = self.lb == self.ub
            # pivot threshold relative to the row scale: noise on big-M
            # columns must not qualify as a pivot
            pt = PIVOT_TOL * max(1.0, float(np.abs(rho).max()))
            if to_lower:
                ok = ((self.vstat == AT_LOWER) & (rho < -pt) & ~fixed) \
                    | ((self.vstat == AT_UPPER) & (rho > pt) & ~fixed) \
                    | ((self.vstat == NB_FREE) & (np.abs(rho) > pt))
            else:
                ok = ((self.vstat == AT_LOWER) & (rho > pt) & ~fixed) \
                    | ((self.vstat == AT_UPPER) & (rho < -pt) & ~fixed) \
                    | ((self.vstat == NB_FREE) & (np.abs(rho) > pt))
            ok &= nb
            cand = np.flatnonzero(ok)
            if cand.size == 0:
                # certificate: max over the variable box of pi'(A xbar)
                # is strictly below pi'b, so no feasible point exists
                pi = self.Binv[r, :] / self.row_scale
                if to_lower:
                    pi = -pi
                return ("infeasible", iters, pi.copy())

            cand_ratios = np.abs(d[cand]) / np.abs(rho[cand])
            # walk candidates from preferred to least until a numerically
            # sound pivot appears
            w = None
            j_enter = -1
            alive = np.ones(cand.size, dtype=bool)
            while alive.any():
                live = cand[alive]
                ratios = cand_ratios[alive]
                rmin = float(ratios.min())
                near = ratios <= rmin + 1e-9 * (1.0 + rmin)
                if bland:
                    pick = live[near].min()
                else:
                    tied = live[near]
                    pick = int(tied[np.argmax(np.abs(rho[tied]))])
                w_try = self.Binv @ self.A[:, pick]
                if self._pivot_ok(r, w_try):
                    j_enter = int(pick)
                    w = w_try
                    break
                alive[np.searchsorted(cand, pick)] = False
            if j_enter < 0:
                if self._pivots_since_refactor > 0:
                    self._refactorize()
                    d = None
                    continue
                raise _BasisReset
            leave_col = int(self.basis[r])
            theta = d[j_enter] / rho[j_enter]
            d = d - theta * rho
            d[leave_col] = -theta
            d[j_enter] = 0.0
            self._pivot(r, j_enter, w)
            self.vstat[leave_col] = AT_LOWER if to_lower else AT_UPPER
            iters += 1
            if rmin <= 1e-12:
                stall += 1
                if stall > self.m + self.ntot:
                    bland = True
            else:
                stall = 0

    # ------------------------------------------------------------------
    # primal simplex with Dantzig pricing and Bland fallback

    def _primal_simplex(self, max_iter: int, bland: bool = False):
        iters = 0
        stall = 0
        bland_forced = bland
        tol = FEAS_TOL * self.scale
        banned: set[int] = set()
        while True:
            if iters >= max_iter:
                raise MaxIterationsError("primal simplex exceeded iteration limit")
            y = self.c[self.basis] @ self.Binv
            d = self.c - y @ self.A

            nb = self.vstat != BASIC
            movable = nb & (self.lb != self.ub)
            down_ok = movable & (((self.vstat == AT_LOWER) & (d < -DUAL_TOL))
                                 | ((self.vstat == NB_FREE) & (d < -DUAL_TOL)))
            up_ok = movable & (((self.vstat == AT_UPPER) & (d > DUAL_TOL))
                               | ((self.vstat == NB_FREE) & (d > DUAL_TOL)))
            elig = down_ok | up_ok
            if banned:
                elig[list(banned)] = False
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                if banned:
                    # only numerically unusable columns remain; a fresh
                    # factorization usually rehabilitates them
                    banned.clear()
                    self._refactorize()
                    cand = np.flatnonzero(down_ok | up_ok)
                    if cand.size == 0:
                        return ("optimal", iters)
                else:
                    return ("optimal", iters)
            if bland:
                enter = int(cand[0])
            else:
                enter = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if down_ok[enter] else -1.0

            w = self.Binv @ self.A[:, enter]
            xB = self._compute_xB()
            lbB = self.lb[self.basis]
            ubB = self.ub[self.basis]
            delta = direction * w
            pt = PIVOT_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))

            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where((delta > pt) & np.isfinite(lbB),
                                (xB - lbB) / delta, np.inf)
                t_hi = np.where((delta < -pt) & np.isfinite(ubB),
                                (xB - ubB) / delta, np.inf)
            t_all = np.minimum(t_lo, t_hi)
            t_all = np.maximum(t_all, 0.0)
            t_best = float(t_all.min()) if self.m else np.inf

            span = self.ub[enter] - self.lb[enter]
            flip = float(span) if np.isfinite(span) else np.inf

            if not np.isfinite(t_best) and not np.isfinite(flip):
                return ("unbounded", iters)

            if flip < t_best - 1e-12:
                self.vstat[enter] = AT_UPPER if self.vstat[enter] == AT_LOWER else AT_LOWER
                iters += 1
                stall = 0
                continue

            ties = np.flatnonzero(t_all <= t_best + 1e-9 * (1.0 + t_best))
            if bland:
                r_best = int(ties[np.argmin(self.basis[ties])])
            else:
                r_best = int(ties[np.argmax(np.abs(delta[ties]))])
            if not self._pivot_ok(r_best, w):
                banned.add(enter)
                continue
            banned.clear()
            leave_col = int(self.basis[r_best])
            hit_lower = delta[r_best] > 0
            self._pivot(r_best, enter, w)
            self.vstat[leave_col] = AT_LOWER if hit_lower else AT_UPPER
            iters += 1
            if t_best <= tol:
                stall += 1
                if stall > 2 * (self.m + 10):
                    bland = True
            else:
                stall = 0
                bland = bland_forced


def lp_solve(c, Aeq=None, beq=None, Aineq=None, bineq=None, lb=None, ub=None) -> LpSolution:
    """One-shot LP solve; see :class:`BoundedSimplex` for the warm API."""
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    if lb is None:
        lb = np.full(n, -np.inf)
    if ub is None:
        ub = np.full(n, np.inf)
    solver = BoundedSimplex(c, Aeq, beq, Aineq, bineq, lb, ub)
    return solver.solve()
