"""Maximal positively invariant set of a linear autonomous system.

Standard set recursion: Omega_{t+1} = Omega_t intersect pre(Omega_t),
with redundancy removal after every step and convergence detected by
row-wise LP containment.  Terminal sets are sometimes not finitely
determined, so hitting the iteration cap is reported through
``finitely_determined`` instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyPolytopeError
from .lp import lp_solve
from .model import Polytope

ROW_TOL = 1e-9


@dataclass(frozen=True)
class InvariantResult:
    omega: Polytope
    iterations: int
    finitely_determined: bool


def pre_set(A_cl, omega: Polytope) -> Polytope:
    """States mapped into omega in one step: {x : (H A_cl) x <= h}."""
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    if A_cl.shape[1] != omega.dim:
        raise DimensionError(f"A_cl has {A_cl.shape[1]} columns, polytope dim {omega.dim}")
    return Polytope(omega.H @ A_cl, omega.h)


def reduce_polytope(p: Polytope) -> Polytope:
    """Drop every row that is implied by the others (keeps one copy of dupes)."""
    sol = lp_solve(np.zeros(p.dim), Aineq=p.H, bineq=p.h)
    if sol.status != "optimal":
        raise EmptyPolytopeError("polytope has no feasible point")
    keep = list(range(p.nrows))
    i = 0
    while i < len(keep):
        r = keep[i]
        others = [k for k in keep if k != r]
        if not others:
            i += 1
            continue
        sol = lp_solve(-p.H[r], Aineq=p.H[others], bineq=p.h[others])
        if sol.status == "optimal" and -sol.objective <= p.h[r] + ROW_TOL:
            keep.pop(i)
        else:
            i += 1
    return Polytope(p.H[keep], p.h[keep])


def _contains(outer: Polytope, inner: Polytope, tol: float = ROW_TOL) -> bool:
    """Row-wise LP check that inner is a subset of outer."""
    for r in range(outer.nrows):
        sol = lp_solve(-outer.H[r], Aineq=inner.H, bineq=inner.h)
        if sol.status != "optimal" or -sol.objective > outer.h[r] + tol:
            return False
    return True


def max_invariant_set(A_cl, constraints: Polytope, max_iter: int = 200) -> InvariantResult:
    """Largest subset of ``constraints`` that the closed loop never leaves."""
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    n = constraints.dim
    if A_cl.shape != (n, n):
        raise DimensionError(f"A_cl must be {n}x{n}, got {A_cl.shape}")
    if np.any(constraints.h <= 0):
        raise EmptyPolytopeError("constraint set must contain the origin strictly")
    box = _bounded(constraints)
    if not box:
        raise EmptyPolytopeError("constraint set must be bounded")

    omega = reduce_polytope(constraints)
    for t in range(1, max_iter + 1):
        pre = pre_set(A_cl, omega)
        candidate = reduce_polytope(Polytope(np.vstack([omega.H, pre.H]),
                                             np.concatenate([omega.h, pre.h])))
        # candidate is a subset of omega by construction, so equality
        # reduces to the reverse containment
        if _contains(candidate, omega):
            return InvariantResult(omega=candidate, iterations=t, finitely_determined=True)
        omega = candidate
    return InvariantResult(omega=omega, iterations=max_iter, finitely_determined=False)


def _bounded(p: Polytope) -> bool:
    for i in range(p.dim):
        e = np.zeros(p.dim)
        e[i] = 1.0
        for sign in (1.0, -1.0):
            sol = lp_solve(sign * e, Aineq=p.H, bineq=p.h)
            if sol.status != "optimal":
                return False
    return True


def invariance_margin(A_cl, omega: Polytope) -> float:
    """Worst slack of the invariance condition A_cl x in omega over omega.

    Nonpositive (up to LP tolerance) iff omega is positively invariant:
    returns max_i ( max_{x in omega} h_i'(A_cl x) - b_i ).
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    worst = -np.inf
    for r in range(omega.nrows):
        sol = lp_solve(-(omega.H[r] @ A_cl), Aineq=omega.H, bineq=omega.h)
        if sol.status != "optimal":
            return np.inf
        worst = max(worst, -sol.objective - omega.h[r])
    return float(worst)
