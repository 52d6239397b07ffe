"""Branch-and-bound solver for mixed binary linear programs.

Two modes:

* ``optimize`` searches for the global minimum (best-bound node order,
  absolute gap 1e-6).
* ``feasibility`` with a threshold stops at the first integer-feasible
  point whose objective is at or below the threshold, or proves that no
  such point exists.  Nodes are explored depth-first, which dives to
  incumbents quickly; the node LPs are pure feasibility restorations
  against an internal row  c'v <= threshold.

Branching picks the most fractional binary (ties by lowest index) and the
node order is fixed, so verdicts, objectives and reported points are
deterministic across runs.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import BoundedSimplex

INT_TOL = 1e-7
GAP_TOL = 1e-6


@dataclass
class MilpProblem:
    c: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    Aineq: np.ndarray
    bineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.Aeq = np.zeros((0, n)) if self.Aeq is None else np.asarray(self.Aeq, dtype=float).reshape(-1, n)
        self.Aineq = np.zeros((0, n)) if self.Aineq is None else np.asarray(self.Aineq, dtype=float).reshape(-1, n)
        self.beq = np.zeros(0) if self.beq is None else np.asarray(self.beq, dtype=float).ravel()
        self.bineq = np.zeros(0) if self.bineq is None else np.asarray(self.bineq, dtype=float).ravel()
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        self.is_binary = np.zeros(n, dtype=bool) if self.is_binary is None \
            else np.asarray(self.is_binary, dtype=bool).ravel()
        if not self.names:
            self.names = [f"v{j}" for j in range(n)]
        if len(self.names) != n:
            raise ValueError("names length does not match variable count")
        bad = self.is_binary & ((self.lb < -INT_TOL) | (self.ub > 1 + INT_TOL))
        if np.any(bad):
            raise ValueError("binary variables must have bounds within [0, 1]")

    @property
    def nvar(self) -> int:
        return self.c.size

    def row_violation(self, x) -> float:
        """Worst constraint violation of a point (bounds included)."""
        v = 0.0
        if self.beq.size:
            v = max(v, float(np.abs(self.Aeq @ x - self.beq).max()))
        if self.bineq.size:
            v = max(v, float(max(0.0, (self.Aineq @ x - self.bineq).max())))
        v = max(v, float(max(0.0, (self.lb - x).max(initial=0.0))))
        v = max(v, float(max(0.0, (x - self.ub).max(initial=0.0))))
        return v


@dataclass
class MilpStats:
    nodes_explored: int = 0
    lp_iterations: int = 0
    wall_time: float = 0.0
    bound_history: list[float] = field(default_factory=list)


@dataclass
class MilpResult:
    status: str           # optimal | infeasible | feasible_found | node_limit | time_limit | unbounded
    objective: float = np.nan
    point: np.ndarray | None = None
    stats: MilpStats = field(default_factory=MilpStats)


def _most_fractional(x, binary_idx) -> int | None:
    frac = x[binary_idx] - np.floor(x[binary_idx])
    dist = np.minimum(frac, 1.0 - frac)
    worst = float(dist.max()) if dist.size else 0.0
    if worst <= INT_TOL:
        return None
    ties = np.flatnonzero(dist >= worst - 1e-12)
    return int(binary_idx[ties.min()])


def bnb_solve(problem: MilpProblem, mode: str = "optimize",
              threshold: float | None = None,
              node_limit: int = 2_000_000, time_limit: float = np.inf) -> MilpResult:
    """Solve a binary MILP; ``mode`` is "optimize" or "feasibility".

    Feasibility mode requires ``threshold`` and answers the question "is
    there an integer point with objective <= threshold?".
    """
    if mode not in ("optimize", "feasibility"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "feasibility" and threshold is None:
        raise ValueError("feasibility mode needs a threshold")

    t0 = time.perf_counter()
    stats = MilpStats()
    binary_idx = np.flatnonzero(problem.is_binary)

    if mode == "feasibility":
        # target row makes every LP-feasible leaf qualify automatically
        Aineq = np.vstack([problem.Aineq, problem.c[None, :]])
        bineq = np.concatenate([problem.bineq, [threshold]])
        ws = BoundedSimplex(np.zeros(problem.nvar), problem.Aeq, problem.beq,
                            Aineq, bineq, problem.lb, problem.ub)
    else:
        ws = BoundedSimplex(problem.c, problem.Aeq, problem.beq,
                            problem.Aineq, problem.bineq, problem.lb, problem.ub)

    root_bounds = {int(j): (float(problem.lb[j]), float(problem.ub[j])) for j in binary_idx}
    applied: dict[int, float] | None = None  # None marks unknown solver bound state

    def apply_fixings(fixings: tuple[tuple[int, float], ...]):
        """Move the solver to the node's bounds, touching only the diff."""
        nonlocal applied
        want = dict(fixings)
        if applied is None:
            for j, (lo, hi) in root_bounds.items():
                if j in want:
                    ws.set_bounds(j, want[j], want[j])
                else:
                    ws.set_bounds(j, lo, hi)
        else:
            for j, v in want.items():
                if applied.get(j) != v:
                    ws.set_bounds(j, v, v)
            for j in applied:
                if j not in want:
                    lo, hi = root_bounds[j]
                    ws.set_bounds(j, lo, hi)
        applied = want

    def finish(status, objective=np.nan, point=None):
        stats.wall_time = time.perf_counter() - t0
        return MilpResult(status=status, objective=objective, point=point, stats=stats)

    def _acceptable(out) -> bool:
        if problem.row_violation(out) > 1e-8:
            return False
        if threshold is not None and \
                float(problem.c @ out) > threshold + 1e-9 * (1 + abs(threshold)):
            return False
        return True

    def polish(x, feasibility_only):
        """Accept a near-integral point only if the exactly-rounded point
        satisfies every row on its own.

        Rounding deltas on binaries propagate through big-M couplings, so a
        point that only works thanks to LP tolerances is rejected here (the
        caller then pins one more binary and keeps searching; every genuine
        assignment eventually shows up with its binaries branch-fixed and
        passes unrounded).
        """
        cand = x.copy()
        cand[binary_idx] = np.round(x[binary_idx])
        return cand if _acceptable(cand) else None

    def forced_branch(x, fixings):
        """Pick an unpinned binary implicated in the rounding failure.

        Preference order: a binary with nonzero coefficient in the most
        violated row of the rounded candidate, then the lowest index left.
        """
        fixed = {j for j, _ in fixings}
        cand = x.copy()
        cand[binary_idx] = np.round(x[binary_idx])
        best_row_viol = 0.0
        culprit = None
        if problem.bineq.size:
            resid = problem.Aineq @ cand - problem.bineq
            order = np.argsort(-resid)
            for r in order[:8]:
                if resid[r] <= 1e-8:
                    break
                in_row = np.flatnonzero(problem.is_binary &
                                        (np.abs(problem.Aineq[r]) > 1e-12))
                for j in in_row:
                    if int(j) not in fixed:
                        culprit = int(j)
                        break
                if culprit is not None:
                    break
        if culprit is None:
            for j in binary_idx:
                if int(j) not in fixed:
                    culprit = int(j)
                    break
        if culprit is None:
            return None, None
        return culprit, float(np.round(x[culprit]))

    if mode == "feasibility":
        stack: list[tuple[tuple[tuple[int, float], ...]]] = [((),)]
        while stack:
            if stats.nodes_explored >= node_limit:
                return finish("node_limit")
            if time.perf_counter() - t0 > time_limit:
                return finish("time_limit")
            (fixings,) = stack.pop()
            apply_fixings(fixings)
            sol = ws.solve(feasibility_only=True)
            stats.nodes_explored += 1
            stats.lp_iterations += sol.iterations
            if sol.status != "optimal":
                continue
            x = ws.current_point()
            j = _most_fractional(x, binary_idx)
            if j is None:
                xp = polish(x, feasibility_only=True)
                if xp is not None:
                    return finish("feasible_found", objective=float(problem.c @ xp), point=xp)
                # rounding was infeasible: the subtree may still hold other
                # assignments, so pin one more binary explicitly
                j, first = forced_branch(x, fixings)
                if j is None:
                    continue  # every binary pinned exactly, nothing here
                second = 1.0 - first
            else:
                frac = x[j] - np.floor(x[j])
                first = 1.0 if frac > 0.5 else 0.0
                second = 1.0 - first
            # LIFO: push the second-choice side first
            stack.append(((fixings + ((j, second),)),))
            stack.append(((fixings + ((j, first),)),))
        return finish("infeasible")

    # optimize mode: best-bound search
    incumbent = None
    incumbent_obj = np.inf
    counter = 0
    heap: list[tuple[float, int, tuple[tuple[int, float], ...]]] = [(-np.inf, counter, ())]
    while heap:
        if stats.nodes_explored >= node_limit:
            return finish("node_limit", objective=incumbent_obj, point=incumbent)
        if time.perf_counter() - t0 > time_limit:
            return finish("time_limit", objective=incumbent_obj, point=incumbent)
        parent_bound, _, fixings = heapq.heappop(heap)
        if parent_bound >= incumbent_obj - GAP_TOL:
            continue
        apply_fixings(fixings)
        sol = ws.solve()
        stats.nodes_explored += 1
        stats.lp_iterations += sol.iterations
        stats.bound_history.append(parent_bound)
        if sol.status == "infeasible":
            continue
        if sol.status == "unbounded":
            return finish("unbounded")
        if sol.objective >= incumbent_obj - GAP_TOL:
            continue
        x = sol.x
        j = _most_fractional(x, binary_idx)
        if j is None:
            xp = polish(x, feasibility_only=False)
            if xp is not None:
                obj = float(problem.c @ xp)
                if obj < incumbent_obj:
                    incumbent_obj = obj
                    incumbent = xp
                continue
            j, first = forced_branch(x, fixings)
            if j is None:
                continue
        else:
            frac = x[j] - np.floor(x[j])
            first = 1.0 if frac > 0.5 else 0.0
        for side in (first, 1.0 - first):
            counter += 1
            heapq.heappush(heap, (sol.objective, counter, fixings + ((j, side),)))

    if incumbent is None:
        return finish("infeasible")
    return finish("optimal", objective=incumbent_obj, point=incumbent)
