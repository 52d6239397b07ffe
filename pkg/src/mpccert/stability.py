"""A-posteriori closed-loop stability certification.

The controller QP's value function is used as a Lyapunov candidate.  The
worst-case one-step difference

    min_{x_k in region}  V*(x_k) - V*(x_{k+1}),   x_{k+1} = A x_k + B u*_k

is a bilevel problem whose inner solves are replaced by their KKT systems;
complementarity is linearized with binaries (big-M), the resulting
indefinite QP is collapsed once more through its own KKT system, and the
outcome is a mixed binary LINEAR program.  If no point in the region
pushes the difference below ``-eps_strict`` the design is certified; a
feasible point is returned as a witness and cross-checked against two
plain QP solves.

The test is sufficient, not necessary: an Inconclusive verdict never
proves instability.  It also presumes recursive feasibility of the MPC
loop; states whose successor is infeasible simply never satisfy the
second KKT system, so they are outside the certified statement.

Soundness of the KKT collapse: the analysis region is compact and every
variable of the inner problem is bounded on its feasible set, so the
inner minimum is attained; with affine constraints the KKT conditions
are necessary, hence the minimum is a KKT point and ruling out all KKT
points with difference below the threshold rules out the minimum too.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .condense import CondensedQp, condense
from .errors import DimensionError, MpcCertError
from .lp import lp_solve
from .milp import MilpProblem, MilpResult, MilpStats, bnb_solve
from .model import BigMConfig, MpcSpec, Polytope, region_bounding_box, validate_spec
from .qp import qp_solve

BLOCKS = ("primFeas", "primBigM", "dualLo", "dualHi")
DEFAULT_DUAL_BIGM = 1e4
CEILING_REL_TOL = 1e-6
CROSSCHECK_REL_TOL = 1e-5


@dataclass(frozen=True)
class StabilityOptions:
    eps_strict: float = 1e-6
    decrease_margin: float = 0.0
    # sign of the u'Ru part of the margin term; +1 reproduces the printed
    # form  -eps (x'Qx - u'Ru), -1 penalizes both quadratics
    decrease_margin_u_sign: float = 1.0
    bigm: BigMConfig = field(default_factory=BigMConfig)
    use_structure_cuts: bool = True
    bigm_auto_grow: bool = True
    grow_factor: float = 10.0
    max_grow_retries: int = 3
    node_limit: int = 2_000_000
    time_limit: float = np.inf

    def __post_init__(self):
        if self.eps_strict <= 0:
            raise ValueError("eps_strict must be positive")


@dataclass
class BlockedStability:
    """One-step difference problem in blocked matrix form.

    The decision vector is y = [U_k; x_k; lam_k; U_{k+1}; x_{k+1}; lam_{k+1}]
    with Ebar y = 0 (dynamics and the two stationarity systems) and
    Abar y <= bbar + dbar z for binary activity indicators z.
    """
    Hbar: np.ndarray
    Ebar: np.ndarray
    Abar: np.ndarray
    bbar: np.ndarray
    dbar: np.ndarray
    nU: int
    nx: int
    nlam: int
    region_rows: list[int]
    exclusive_pairs: list[tuple[int, int]]
    m1: np.ndarray  # per-row dual bounds (controller duals)
    m2: np.ndarray  # per-row slack bounds (controller slacks)
    m4: np.ndarray  # per-Abar-row outer slack bounds
    qp: CondensedQp | None = None

    @property
    def ny(self) -> int:
        return 2 * (self.nU + self.nx + self.nlam)

    @property
    def nz(self) -> int:
        return 2 * self.nlam

    @property
    def n_rows(self) -> int:
        return self.Abar.shape[0]

    # y-block offsets
    @property
    def off_xk(self) -> int:
        return self.nU

    @property
    def off_lamk(self) -> int:
        return self.nU + self.nx

    @property
    def off_Uk1(self) -> int:
        return self.nU + self.nx + self.nlam

    @property
    def off_xk1(self) -> int:
        return 2 * self.nU + self.nx + self.nlam

    @property
    def off_lamk1(self) -> int:
        return 2 * (self.nU + self.nx) + self.nlam

    def row_index(self, block: str, time: int, i: int) -> int:
        """Row of Abar holding constraint ``i`` of ``block`` at time k+time."""
        if block not in BLOCKS:
            raise KeyError(f"unknown block {block!r}")
        if time not in (0, 1) or not (0 <= i < self.nlam):
            raise IndexError(f"no row ({block}, {time}, {i})")
        return (4 * self.nlam) * time + BLOCKS.index(block) * self.nlam + i

    def z_index(self, time: int, i: int) -> int:
        if time not in (0, 1) or not (0 <= i < self.nlam):
            raise IndexError(f"no binary z ({time}, {i})")
        return self.nlam * time + i

    def blocked_objective(self, y) -> float:
        y = np.asarray(y, dtype=float).ravel()
        return float(0.5 * y @ self.Hbar @ y)

    def assemble_y(self, x_k, sol_k, x_k1, sol_k1) -> np.ndarray:
        """Stack two QP solutions into the blocked decision vector."""
        return np.concatenate([
            sol_k.U, np.asarray(x_k, dtype=float).ravel(), sol_k.lam,
            sol_k1.U, np.asarray(x_k1, dtype=float).ravel(), sol_k1.lam,
        ])


@dataclass
class WitnessCheck:
    x: np.ndarray
    claimed_delta_v: float
    crosscheck_delta_v: float
    passed: bool
    recursive_feasibility_violated: bool = False


@dataclass
class StabilityReport:
    verdict: str  # "certified" | "inconclusive" | "unreliable"
    witness: np.ndarray | None = None
    claimed_delta_v: float = np.nan
    crosscheck_delta_v: float = np.nan
    bigm_diagnostics: list[str] = field(default_factory=list)
    stats: MilpStats = field(default_factory=MilpStats)
    grow_retries: int = 0
    recursive_feasibility_violated: bool = False


def _per_row(value, nrows: int, default: float) -> np.ndarray:
    if value is None:
        return np.full(nrows, default)
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        return np.full(nrows, float(arr[0]))
    if arr.size != nrows:
        raise DimensionError(f"big-M vector has {arr.size} entries, expected {nrows}")
    return arr.copy()


def slack_upper_bounds(qp: CondensedQp, region: Polytope, m1: np.ndarray) -> np.ndarray:
    """Sound per-row upper bounds on the controller slacks b - Ex - FU.

    Maximizes each slack by LP over {x in region, E x + F U <= b}; rows whose
    LP is unbounded fall back to a stationarity-based interval bound with the
    controller duals capped at m1.
    """
    nlam, nU, nx = qp.nlam, qp.nU, qp.E.shape[1]
    if nlam == 0:
        return np.zeros(0)
    out = np.empty(nlam)
    Aineq = np.vstack([
        np.hstack([qp.E, qp.F]),
        np.hstack([region.H, np.zeros((region.nrows, nU))]),
    ])
    bineq = np.concatenate([qp.b, region.h])
    interval = None
    for i in range(nlam):
        c = np.concatenate([qp.E[i], qp.F[i]])  # maximize b_i - (e_i'x + f_i'U)
        sol = lp_solve(c, Aineq=Aineq, bineq=bineq)
        if sol.status == "optimal":
            out[i] = qp.b[i] - sol.objective
        elif sol.status == "infeasible":
            out[i] = 1.0  # region never intersects the feasible set
        else:
            if interval is None:
                box = region_bounding_box(region)
                if box is None:
                    raise MpcCertError("analysis region must be bounded")
                xabs = np.maximum(np.abs(box[0]), np.abs(box[1]))
                Hinv = np.linalg.inv(qp.H)
                umax = np.abs(Hinv @ qp.G) @ xabs + np.abs(Hinv @ qp.F.T) @ m1
                interval = np.abs(qp.E) @ xabs + np.abs(qp.F) @ umax
            out[i] = qp.b[i] + interval[i]
    return out


def resolve_bigm(qp: CondensedQp, region: Polytope, opts: StabilityOptions
                 ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-row (m1, m2) with pre-solve diagnostics for undersized user values."""
    nlam = qp.nlam
    diags: list[str] = []
    m1 = _per_row(opts.bigm.m1, nlam, DEFAULT_DUAL_BIGM)
    computed = slack_upper_bounds(qp, region, m1)
    computed = np.maximum(computed, 1.0) * 1.05  # keep the bound strictly slack
    if opts.bigm.m2 is None:
        m2 = computed
    else:
        m2 = _per_row(opts.bigm.m2, nlam, 0.0)
        for i in np.flatnonzero(m2 < computed - 1e-12):
            diags.append(f"m2[{int(i)}]={m2[i]:g} is below the computed slack bound {computed[i]:g}")
    return m1, m2, diags


def assemble_blocked(qp: CondensedQp, spec: MpcSpec, opts: StabilityOptions,
                     m1: np.ndarray | None = None,
                     m2: np.ndarray | None = None) -> BlockedStability:
    """Build the blocked one-step difference problem from the controller QP.

    ``qp`` must already include move blocking when the spec uses it.  The
    analysis-region rows are appended to the inequality stack with their own
    outer duals but no activity binary: they are not controller constraints,
    so they carry no complementarity with the controller duals.
    """
    system = spec.system
    region = spec.analysis_region
    if region is None:
        raise MpcCertError("verification requires a bounded analysis region")
    nU, nx, nlam = qp.nU, system.nx, qp.nlam
    if qp.E.shape[1] != nx:
        raise DimensionError("qp and system disagree on the state dimension")

    if m1 is None or m2 is None:
        m1, m2, _ = resolve_bigm(qp, region, opts)

    ny = 2 * (nU + nx + nlam)
    sl_Uk = slice(0, nU)
    sl_xk = slice(nU, nU + nx)
    sl_lk = slice(nU + nx, nU + nx + nlam)
    base1 = nU + nx + nlam
    sl_Uk1 = slice(base1, base1 + nU)
    sl_xk1 = slice(base1 + nU, base1 + nU + nx)
    sl_lk1 = slice(base1 + nU + nx, ny)

    # objective 1/2 y'Hbar y = V_k - V_{k+1} (- margin term when active)
    Hbar = np.zeros((ny, ny))
    Hbar[sl_Uk, sl_Uk] = qp.H
    Hbar[sl_Uk, sl_xk] = qp.G
    Hbar[sl_xk, sl_Uk] = qp.G.T
    Hbar[sl_xk, sl_xk] = qp.Qbar
    Hbar[sl_Uk1, sl_Uk1] = -qp.H
    Hbar[sl_Uk1, sl_xk1] = -qp.G
    Hbar[sl_xk1, sl_Uk1] = -qp.G.T
    Hbar[sl_xk1, sl_xk1] = -qp.Qbar

    # map from the decision vector to the applied input u_k
    if spec.blocking is not None:
        sel = spec.blocking[:system.nu, :]
    else:
        sel = np.zeros((system.nu, nU))
        sel[:, :system.nu] = np.eye(system.nu)

    eps = opts.decrease_margin
    if eps != 0.0:
        Hbar[sl_xk, sl_xk] -= 2.0 * eps * spec.Q
        Hbar[sl_Uk, sl_Uk] += opts.decrease_margin_u_sign * 2.0 * eps * (sel.T @ spec.R @ sel)

    # equalities: dynamics + stationarity at both steps
    Bbar = system.B @ sel
    mE = nx + 2 * nU
    Ebar = np.zeros((mE, ny))
    Ebar[:nx, sl_Uk] = Bbar
    Ebar[:nx, sl_xk] = system.A
    Ebar[:nx, sl_xk1] = -np.eye(nx)
    Ebar[nx:nx + nU, sl_Uk] = qp.H
    Ebar[nx:nx + nU, sl_xk] = qp.G
    Ebar[nx:nx + nU, sl_lk] = qp.F.T
    Ebar[nx + nU:, sl_Uk1] = qp.H
    Ebar[nx + nU:, sl_xk1] = qp.G
    Ebar[nx + nU:, sl_lk1] = qp.F.T

    # inequality stack: 4 blocks per time step, then the region rows
    m_r = region.nrows
    mA = 8 * nlam + m_r
    Abar = np.zeros((mA, ny))
    bbar = np.zeros(mA)
    dbar = np.zeros((mA, 2 * nlam))
    for t, (slU, slx, sll) in enumerate(((sl_Uk, sl_xk, sl_lk), (sl_Uk1, sl_xk1, sl_lk1))):
        base = 4 * nlam * t
        zcol = slice(nlam * t, nlam * (t + 1))
        r_pf = slice(base, base + nlam)
        r_pb = slice(base + nlam, base + 2 * nlam)
        r_lo = slice(base + 2 * nlam, base + 3 * nlam)
        r_hi = slice(base + 3 * nlam, base + 4 * nlam)
        Abar[r_pf, slU] = qp.F
        Abar[r_pf, slx] = qp.E
        bbar[r_pf] = qp.b
        Abar[r_pb, slU] = -qp.F
        Abar[r_pb, slx] = -qp.E
        bbar[r_pb] = m2 - qp.b
        dbar[r_pb, zcol] = -np.diag(m2)
        Abar[r_lo, sll] = -np.eye(nlam)
        Abar[r_hi, sll] = np.eye(nlam)
        dbar[r_hi, zcol] = np.diag(m1)
    if m_r:
        Abar[8 * nlam:, sl_xk] = region.H
        bbar[8 * nlam:] = region.h

    # normalize each inequality row by a power of two (exact in floating
    # point): the feasible set and the products bbar'eta, dbar'eta are
    # invariant, the outer duals simply rescale, and the basis matrices of
    # the final program stop mixing 1e4-scale big-M rows with unit rows
    row_mag = np.maximum(np.abs(Abar).max(axis=1, initial=0.0),
                         np.abs(dbar).max(axis=1, initial=0.0))
    row_mag = np.maximum(row_mag, 1e-12)
    scale = 2.0 ** np.round(np.log2(row_mag))
    scale = np.maximum(scale, 1.0)
    Abar /= scale[:, None]
    bbar /= scale
    dbar /= scale[:, None]

    # outer primal slack bounds per Abar row (sound by construction of m1/m2)
    m4 = np.empty(mA)
    for t in range(2):
        base = 4 * nlam * t
        m4[base:base + nlam] = m2
        m4[base + nlam:base + 2 * nlam] = m2
        m4[base + 2 * nlam:base + 3 * nlam] = m1
        m4[base + 3 * nlam:base + 4 * nlam] = m1
    if m_r:
        box = region_bounding_box(region)
        if box is None:
            raise MpcCertError("analysis region must be bounded")
        xabs = np.maximum(np.abs(box[0]), np.abs(box[1]))
        m4[8 * nlam:] = region.h + np.abs(region.H) @ xabs
    # strict headroom so points attaining the true slack maximum do not sit
    # exactly on the big-M ceiling; slack units follow the row normalization
    m4 = np.maximum(m4, 1.0) * 1.05
    if opts.bigm.m4 is not None:
        m4 = _per_row(opts.bigm.m4, mA, 0.0)
    m4 = m4 / scale

    pairs = _antiparallel_pairs(qp)
    return BlockedStability(Hbar=Hbar, Ebar=Ebar, Abar=Abar, bbar=bbar, dbar=dbar,
                            nU=nU, nx=nx, nlam=nlam,
                            region_rows=list(range(8 * nlam, mA)),
                            exclusive_pairs=pairs, m1=m1, m2=m2, m4=m4, qp=qp)


def _antiparallel_pairs(qp: CondensedQp, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Controller rows (i, j) that can never be active simultaneously."""
    rows = np.hstack([qp.E, qp.F])
    norms = np.linalg.norm(rows, axis=1)
    pairs = []
    for i in range(qp.nlam):
        if norms[i] <= tol:
            continue
        for j in range(i + 1, qp.nlam):
            if norms[j] <= tol:
                continue
            c = norms[i] / norms[j]
            if np.abs(rows[i] + c * rows[j]).max() <= tol * (1 + norms[i]):
                if qp.b[i] + c * qp.b[j] > tol:
                    pairs.append((i, j))
    return pairs


def structure_cuts(bs: BlockedStability) -> tuple[np.ndarray, np.ndarray]:
    """Redundant binary implications (A_cut [z; q] <= rhs) that prune search.

    Per controller row and time step: the two primal rows are both tight iff
    the constraint is active, and the two dual rows are both tight iff it is
    inactive.  Per exclusive pair: both cannot be active, and activity of one
    pins the other's primal rows slack and its dual to zero.
    """
    nz, mq = bs.nz, bs.n_rows
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def cut(zc: dict[int, float], qc: dict[int, float], b: float):
        r = np.zeros(nz + mq)
        for idx, v in zc.items():
            r[idx] = v
        for idx, v in qc.items():
            r[nz + idx] = v
        rows.append(r)
        rhs.append(b)

    for t in (0, 1):
        for i in range(bs.nlam):
            z = bs.z_index(t, i)
            pf = bs.row_index("primFeas", t, i)
            pb = bs.row_index("primBigM", t, i)
            lo = bs.row_index("dualLo", t, i)
            hi = bs.row_index("dualHi", t, i)
            cut({z: -1.0}, {pf: 1.0, pb: 1.0}, 1.0)
            cut({z: 2.0}, {pf: -1.0, pb: -1.0}, 0.0)
            cut({z: 1.0}, {lo: 1.0, hi: 1.0}, 2.0)
            cut({z: -2.0}, {lo: -1.0, hi: -1.0}, -2.0)
        for (i, j) in bs.exclusive_pairs:
            zi, zj = bs.z_index(t, i), bs.z_index(t, j)
            cut({zi: 1.0, zj: 1.0}, {}, 1.0)
            for a, zb in ((i, zj), (j, zi)):
                pf = bs.row_index("primFeas", t, a)
                pb = bs.row_index("primBigM", t, a)
                lo = bs.row_index("dualLo", t, a)
                hi = bs.row_index("dualHi", t, a)
                cut({zb: 1.0}, {pf: 1.0}, 1.0)
                cut({zb: 1.0}, {pb: 1.0}, 1.0)
                cut({zb: 2.0}, {lo: -1.0, hi: -1.0}, 0.0)
    if not rows:
        return np.zeros((0, nz + mq)), np.zeros(0)
    return np.vstack(rows), np.array(rhs)


def build_milp(bs: BlockedStability, opts: StabilityOptions,
               mode: str = "feasibility") -> MilpProblem:
    """Assemble the final mixed binary LP over (y, eta, mu, w, z, q).

    ``mode`` "feasibility" appends the strict-decrease row
    objective <= -eps_strict; "optimize" leaves the problem free for
    minimization of the objective  -1/2 bbar'eta - 1/2 1'w.
    """
    ny, mA, nz = bs.ny, bs.n_rows, bs.nz
    mE = bs.Ebar.shape[0]
    m3 = _per_row(opts.bigm.m3, nz, DEFAULT_DUAL_BIGM)
    m5 = _per_row(opts.bigm.m5, mA, DEFAULT_DUAL_BIGM)
    m4 = bs.m4

    o_y, o_eta, o_mu, o_w, o_z, o_q = np.cumsum([0, ny, mA, mE, nz, nz])[:6]
    nv = ny + mA + mE + 2 * nz + mA

    def block(rows, cols_at):
        M = np.zeros((rows.shape[0], nv))
        for mat, off in cols_at:
            M[:, off:off + mat.shape[1]] = mat
        return M

    Aeq = np.vstack([
        block(bs.Hbar, [(bs.Hbar, o_y), (bs.Abar.T, o_eta), (bs.Ebar.T, o_mu)]),
        block(bs.Ebar, [(bs.Ebar, o_y)]),
    ])
    beq = np.zeros(ny + mE)

    ineq_rows: list[np.ndarray] = []
    ineq_rhs: list[float] = []

    def add(rows, rhs):
        ineq_rows.append(rows)
        ineq_rhs.append(rhs)

    if nz:
        I = np.eye(nz)
        dT = bs.dbar.T
        add(block(I, [(I, o_w), (-dT, o_eta), (np.diag(m3), o_z)]), m3)
        add(block(I, [(-I, o_w), (dT, o_eta), (np.diag(m3), o_z)]), m3)
        add(block(I, [(I, o_w), (-np.diag(m3), o_z)]), np.zeros(nz))
        add(block(I, [(-I, o_w), (-np.diag(m3), o_z)]), np.zeros(nz))
    if mA:
        IA = np.eye(mA)
        add(block(bs.Abar, [(bs.Abar, o_y), (-bs.dbar, o_z)]), bs.bbar)
        add(block(bs.Abar, [(-bs.Abar, o_y), (bs.dbar, o_z), (np.diag(m4), o_q)]),
            m4 - bs.bbar)
        add(block(IA, [(IA, o_eta), (-np.diag(m5), o_q)]), np.zeros(mA))

    c = np.zeros(nv)
    c[o_eta:o_eta + mA] = -0.5 * bs.bbar
    c[o_w:o_w + nz] = -0.5

    if mode == "feasibility":
        add(c[None, :], np.array([-opts.eps_strict]))
    elif mode != "optimize":
        raise ValueError(f"unknown mode {mode!r}")

    if opts.use_structure_cuts:
        A_cut, rhs_cut = structure_cuts(bs)
        if A_cut.shape[0]:
            M = np.zeros((A_cut.shape[0], nv))
            M[:, o_z:o_z + nz] = A_cut[:, :nz]
            M[:, o_q:o_q + mA] = A_cut[:, nz:]
            add(M, rhs_cut)

    Aineq = np.vstack(ineq_rows) if ineq_rows else np.zeros((0, nv))
    bineq = np.concatenate([np.atleast_1d(r) for r in ineq_rhs]) if ineq_rhs else np.zeros(0)

    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    lb[o_eta:o_eta + mA] = 0.0
    lb[o_z:] = 0.0
    ub[o_z:] = 1.0
    is_binary = np.zeros(nv, dtype=bool)
    is_binary[o_z:] = True

    names = _variable_names(bs)
    return MilpProblem(c=c, Aeq=Aeq, beq=beq, Aineq=Aineq, bineq=bineq,
                       lb=lb, ub=ub, is_binary=is_binary, names=names)


def _variable_names(bs: BlockedStability) -> list[str]:
    names: list[str] = []
    for tag, count in (("Uk", bs.nU), ("xk", bs.nx), ("lamk", bs.nlam),
                       ("Uk1", bs.nU), ("xk1", bs.nx), ("lamk1", bs.nlam)):
        names += [f"y_{tag}_{i}" for i in range(count)]
    blocks = ("pf", "pbm", "dlo", "dhi")
    for t in ("k", "k1"):
        for blk in blocks:
            names += [f"eta_{blk}_{t}_{i}" for i in range(bs.nlam)]
    names += [f"eta_reg_{i}" for i in range(len(bs.region_rows))]
    names += [f"mu_dyn_{i}" for i in range(bs.nx)]
    names += [f"mu_sk_{i}" for i in range(bs.nU)]
    names += [f"mu_sk1_{i}" for i in range(bs.nU)]
    for t in ("k", "k1"):
        names += [f"w_{t}_{i}" for i in range(bs.nlam)]
    for t in ("k", "k1"):
        names += [f"z_{t}_{i}" for i in range(bs.nlam)]
    for t in ("k", "k1"):
        for blk in blocks:
            names += [f"q_{blk}_{t}_{i}" for i in range(bs.nlam)]
    names += [f"q_reg_{i}" for i in range(len(bs.region_rows))]
    return names


def milp_layout(bs: BlockedStability) -> dict[str, slice]:
    """Variable slices of the assembled MILP, keyed by block name."""
    ny, mA, nz = bs.ny, bs.n_rows, bs.nz
    mE = bs.Ebar.shape[0]
    o = np.cumsum([0, ny, mA, mE, nz, nz])
    return {
        "y": slice(0, ny),
        "eta": slice(o[1], o[1] + mA),
        "mu": slice(o[2], o[2] + mE),
        "w": slice(o[3], o[3] + nz),
        "z": slice(o[4], o[4] + nz),
        "q": slice(o[5], o[5] + mA),
        "x_witness": slice(bs.off_xk, bs.off_xk + bs.nx),
    }


def validate_bigm(result: MilpResult, bs: BlockedStability, opts: StabilityOptions,
                  spec: MpcSpec | None = None) -> list[str]:
    """Flag variables sitting at a big-M ceiling and undersized slack bounds."""
    diags: list[str] = []
    if spec is not None and bs.qp is not None and spec.analysis_region is not None:
        computed = slack_upper_bounds(bs.qp, spec.analysis_region, bs.m1)
        for i in np.flatnonzero(bs.m2 < computed - 1e-12):
            diags.append(f"m2[{int(i)}]={bs.m2[i]:g} below computed slack bound {computed[i]:g}")
    if result.point is None:
        return diags
    lay = milp_layout(bs)
    x = result.point
    eta = x[lay["eta"]]
    w = x[lay["w"]]
    z = x[lay["z"]]
    y = x[lay["y"]]
    m3 = _per_row(opts.bigm.m3, bs.nz, DEFAULT_DUAL_BIGM)
    m5 = _per_row(opts.bigm.m5, bs.n_rows, DEFAULT_DUAL_BIGM)
    for t in (0, 1):
        lam = y[bs.off_lamk:bs.off_lamk + bs.nlam] if t == 0 \
            else y[bs.off_lamk1:bs.off_lamk1 + bs.nlam]
        for i in range(bs.nlam):
            if lam[i] >= bs.m1[i] * (1 - CEILING_REL_TOL):
                diags.append(f"lambda[{t}][{i}]={lam[i]:g} at its m1 ceiling {bs.m1[i]:g}")
    for r in range(bs.n_rows):
        if eta[r] >= m5[r] * (1 - CEILING_REL_TOL):
            diags.append(f"eta[{r}]={eta[r]:g} at its m5 ceiling {m5[r]:g}")
    for i in range(bs.nz):
        if abs(w[i]) >= m3[i] * (1 - CEILING_REL_TOL):
            diags.append(f"w[{i}]={w[i]:g} at its m3 ceiling {m3[i]:g}")
    slack = bs.bbar + bs.dbar @ z - bs.Abar @ y
    for r in range(bs.n_rows):
        if slack[r] >= bs.m4[r] * (1 - CEILING_REL_TOL):
            diags.append(f"outer slack[{r}]={slack[r]:g} at its m4 ceiling {bs.m4[r]:g}")
    return diags


def witness_check(spec: MpcSpec, x_witness, claimed_delta_v: float,
                  opts: StabilityOptions | None = None) -> WitnessCheck:
    """Independent two-QP evaluation of the value difference at a witness."""
    opts = opts or StabilityOptions()
    x = np.asarray(x_witness, dtype=float).ravel()
    region = spec.analysis_region
    if region is not None and not region.contains(x, tol=1e-7):
        raise ValueError("witness lies outside the analysis region")
    qp = condense(spec)
    s1 = qp_solve(qp, x)
    if s1.status != "optimal":
        raise MpcCertError("controller QP infeasible at the witness")
    nu = spec.system.nu
    u = (spec.blocking @ s1.U)[:nu] if spec.blocking is not None else s1.U[:nu]
    x_next = spec.system.A @ x + spec.system.B @ u
    s2 = qp_solve(qp, x_next)
    if s2.status != "optimal":
        return WitnessCheck(x=x, claimed_delta_v=claimed_delta_v,
                            crosscheck_delta_v=np.nan, passed=False,
                            recursive_feasibility_violated=True)
    dv = s1.value - s2.value
    if opts.decrease_margin:
        margin = float(x @ spec.Q @ x) \
            - opts.decrease_margin_u_sign * float(u @ spec.R @ u)
        dv -= opts.decrease_margin * margin
    passed = abs(dv - claimed_delta_v) <= CROSSCHECK_REL_TOL * (1.0 + abs(claimed_delta_v))
    return WitnessCheck(x=x, claimed_delta_v=claimed_delta_v, crosscheck_delta_v=dv,
                        passed=passed)


def _grow(cfg: BigMConfig, factor: float) -> BigMConfig:
    def g(v):
        if v is None:
            return DEFAULT_DUAL_BIGM * factor
        return np.asarray(v, dtype=float) * factor

    return BigMConfig(m1=g(cfg.m1), m2=cfg.m2, m3=g(cfg.m3), m4=cfg.m4, m5=g(cfg.m5))


def verify_stability(spec: MpcSpec, opts: StabilityOptions | None = None) -> StabilityReport:
    """Run the full certification pipeline on a validated problem."""
    opts = opts or StabilityOptions()
    problems = validate_spec(spec)
    if problems:
        raise MpcCertError("spec fails validation: " + "; ".join(problems))

    qp = condense(spec)
    attempt = 0
    pre_diags_kept: list[str] = []
    while True:
        m1, m2, pre_diags = resolve_bigm(qp, spec.analysis_region, opts)
        if pre_diags and opts.bigm_auto_grow:
            # undersized user slack bounds are replaced by the computed ones
            opts = replace(opts, bigm=replace(opts.bigm, m2=None))
            pre_diags_kept += pre_diags
            m1, m2, _ = resolve_bigm(qp, spec.analysis_region, opts)
            pre_diags = []
        bs = assemble_blocked(qp, spec, opts, m1=m1, m2=m2)
        problem = build_milp(bs, opts, mode="feasibility")
        result = bnb_solve(problem, mode="feasibility", threshold=-opts.eps_strict,
                           node_limit=opts.node_limit, time_limit=opts.time_limit)

        if result.status == "infeasible":
            if pre_diags:
                # an undersized slack bound stayed in force, so the
                # infeasibility proof may have cut true KKT points
                return StabilityReport(verdict="unreliable", stats=result.stats,
                                       bigm_diagnostics=pre_diags,
                                       grow_retries=attempt)
            return StabilityReport(verdict="certified", stats=result.stats,
                                   bigm_diagnostics=pre_diags_kept,
                                   grow_retries=attempt)
        if result.status not in ("feasible_found",):
            raise MpcCertError(f"stability MILP returned {result.status}")

        lay = milp_layout(bs)
        x_w = result.point[lay["x_witness"]].copy()
        claimed = float(result.objective)
        diags = validate_bigm(result, bs, opts) + pre_diags
        wc = witness_check(spec, x_w, claimed, opts)

        if wc.passed and not diags:
            return StabilityReport(verdict="inconclusive", witness=x_w,
                                   claimed_delta_v=claimed,
                                   crosscheck_delta_v=wc.crosscheck_delta_v,
                                   stats=result.stats, grow_retries=attempt)
        if opts.bigm_auto_grow and attempt < opts.max_grow_retries:
            attempt += 1
            opts = replace(opts, bigm=_grow(opts.bigm, opts.grow_factor))
            continue
        if not wc.passed and not wc.recursive_feasibility_violated:
            diags.append(
                f"witness cross-check mismatch: claimed {claimed:g}, "
                f"recomputed {wc.crosscheck_delta_v:g}")
        if wc.recursive_feasibility_violated:
            diags.append("witness successor state has an infeasible controller QP "
                         "(recursive feasibility violated)")
        return StabilityReport(verdict="unreliable", witness=x_w,
                               claimed_delta_v=claimed,
                               crosscheck_delta_v=wc.crosscheck_delta_v,
                               bigm_diagnostics=diags, stats=result.stats,
                               grow_retries=attempt,
                               recursive_feasibility_violated=wc.recursive_feasibility_violated)
