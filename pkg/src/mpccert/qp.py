"""Dense convex QP solver (primal active set).

Solves the controller problem  min_U 1/2 U'HU + (Gx)'U  s.t.  F U <= b - E x
for a fixed state x.  H must be positive definite.  The method keeps an
explicit working set, solves one KKT system per iteration, and breaks all
ties by lowest constraint index, which makes the returned optimizer and
active set deterministic.

When the MPC problem has several optimal active sets the solver returns
one of them (lowest-index rule); the stability test built on top treats
optima pessimistically anyway, so this only affects which witness is
reported, never a verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condense import CondensedQp
from .errors import MaxIterationsError
from .lp import lp_solve

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9


@dataclass
class QpSolution:
    status: str                    # "optimal" | "infeasible"
    U: np.ndarray | None = None
    lam: np.ndarray | None = None  # one multiplier per inequality row
    value: float = np.nan
    active_set: tuple[int, ...] = ()
    farkas: np.ndarray | None = None
    iterations: int = 0


@dataclass
class KktResidual:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def solve_qp_core(H, q, C, d, max_iter: int | None = None) -> QpSolution:
    """min 1/2 u'Hu + q'u  s.t.  C u <= d, H positive definite."""
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    C = np.asarray(C, dtype=float).reshape(-1, q.size)
    d = np.asarray(d, dtype=float).ravel()
    n = q.size
    m = C.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + 1)

    scale = 1.0 + (float(np.abs(d).max()) if m else 0.0)
    ftol = FEAS_TOL * scale

    u_free = np.linalg.solve(H, -q)
    if m == 0 or np.all(C @ u_free <= d + ftol):
        val = float(0.5 * u_free @ H @ u_free + q @ u_free)
        return QpSolution(status="optimal", U=u_free, lam=np.zeros(m), value=val,
                          active_set=(), iterations=0)

    # phase 1: any feasible point of C u <= d
    lpsol = lp_solve(np.zeros(n), Aineq=C, bineq=d)
    if lpsol.status != "optimal":
        ray = lpsol.farkas
        cert = None
        if ray is not None:
            cert = -ray[:m]  # nonnegative row combination with C'cert = 0, d'cert < 0
        return QpSolution(status="infeasible", farkas=cert)
    u = lpsol.x

    work: list[int] = [int(i) for i in np.flatnonzero(np.abs(C @ u - d) <= ftol)]
    # trim to a linearly independent subset (lowest indices first)
    work = _independent_subset(C, work)

    iters = 0
    while True:
        if iters >= max_iter:
            raise MaxIterationsError("active-set QP exceeded iteration limit")
        iters += 1
        W = np.array(work, dtype=int)
        k = W.size
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = H
        if k:
            KKT[:n, n:] = C[W].T
            KKT[n:, :n] = C[W]
        rhs = np.concatenate([-q, d[W]]) if k else -q
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
        u_star = sol[:n]
        lam_w = sol[n:]

        if np.abs(u_star - u).max() <= 1e-11 * (1.0 + np.abs(u).max()):
            neg = np.flatnonzero(lam_w < -DUAL_TOL)
            if neg.size == 0:
                lam = np.zeros(m)
                lam[W] = np.maximum(lam_w, 0.0)
                val = float(0.5 * u_star @ H @ u_star + q @ u_star)
                active = tuple(int(i) for i in np.flatnonzero(np.abs(C @ u_star - d) <= ftol))
                return QpSolution(status="optimal", U=u_star, lam=lam, value=val,
                                  active_set=active, iterations=iters)
            # drop the lowest-index constraint with a negative multiplier
            drop = min(int(W[i]) for i in neg)
            work.remove(drop)
            continue

        p = u_star - u
        Cp = C @ p
        slack = d - C @ u
        alpha = 1.0
        blocker = -1
        for i in range(m):
            if i in work or Cp[i] <= ftol:
                continue
            t = slack[i] / Cp[i]
            if t < alpha - 1e-12:
                alpha = max(t, 0.0)
                blocker = i
        u = u + alpha * p
        if blocker >= 0:
            work.append(blocker)
            work.sort()
            work = _independent_subset(C, work)


def _independent_subset(C: np.ndarray, rows: list[int]) -> list[int]:
    """Greedy lowest-index selection of linearly independent rows."""
    keep: list[int] = []
    for i in rows:
        cand = keep + [i]
        M = C[cand]
        if np.linalg.matrix_rank(M, tol=1e-10) == len(cand):
            keep = cand
    return keep


def qp_solve(qp: CondensedQp, x) -> QpSolution:
    """Solve the controller QP at state x; value includes the x'Qbar x term."""
    x = np.asarray(x, dtype=float).ravel()
    q = qp.G @ x
    d = qp.b - qp.E @ x
    sol = solve_qp_core(qp.H, q, qp.F, d)
    if sol.status == "optimal":
        sol.value += float(0.5 * x @ qp.Qbar @ x)
    return sol


def qp_kkt_residual(qp: CondensedQp, x, U, lam) -> KktResidual:
    """The four KKT residual norms for a candidate primal/dual pair."""
    x = np.asarray(x, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    stat = float(np.abs(qp.H @ U + qp.G @ x + qp.F.T @ lam).max()) if qp.nU else 0.0
    slack = qp.b - qp.E @ x - qp.F @ U
    primal = float(max(0.0, -slack.min())) if qp.nlam else 0.0
    dual = float(max(0.0, -lam.min())) if qp.nlam else 0.0
    comp = float(np.abs(lam * slack).max()) if qp.nlam else 0.0
    return KktResidual(stationarity=stat, primal=primal, dual=dual, complementarity=comp)
