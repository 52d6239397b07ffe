"""Problem-specification types, JSON ingestion, and validation.

The JSON problem file has top-level keys::

    "system":          {"A": [[...]], "B": [[...]]}
    "horizon":         int
    "cost":            {"Q": [[...]], "R": [[...]], "P": [[...]]?}
    "constraints":     {"state"?: {"H","h"}, "input"?: {"H","h"},
                        "terminal"?: {"H","h"}}
    "blocking":        [[0/1,...],...]?
    "analysis_region": {"H": [[...]], "h": [...]}?
    "bigm":            {"m1".."m5": number or [numbers]}?
    "options":         {"eps_strict": float, "decrease_margin": float}?

Matrices are row-major arrays of arrays.  When "P" is omitted it defaults
to the DARE solution; when "analysis_region" is omitted it defaults to the
state-constraint polytope, or the box ||x||_inf <= 10 if there are no
state constraints.

Note on constraint indexing: input constraints are enforced for stages
i = 0 .. N-1.  Constraining u_k (stage 0) is required for the receding
horizon implementation to make sense, even though some formulations start
the bookkeeping at i = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, IndefinitenessError, ParseError
from .lp import lp_solve
from .lq import solve_dare

DEFAULT_REGION_BOX = 10.0


def _as_matrix(obj, name: str) -> np.ndarray:
    try:
        M = np.array(obj, dtype=float)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{name} is not a numeric matrix") from e
    if M.ndim != 2:
        raise ParseError(f"{name} must be a matrix (array of arrays)")
    return M


def _as_vector(obj, name: str) -> np.ndarray:
    try:
        v = np.array(obj, dtype=float)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{name} is not a numeric vector") from e
    if v.ndim != 1:
        raise ParseError(f"{name} must be a flat array")
    return v


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time dynamics x+ = A x + B u."""
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape}")
        if A.shape[0] < 1 or B.shape[1] < 1:
            raise DimensionError("state and input dimensions must be >= 1")
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "B", _freeze(B))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Polytope:
    """Row inequality set {x : H x <= h}."""
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape[0] != h.size:
            raise DimensionError(f"polytope has {H.shape[0]} rows but {h.size} offsets")
        object.__setattr__(self, "H", _freeze(H))
        object.__setattr__(self, "h", _freeze(h))

    @property
    def nrows(self) -> int:
        return self.H.shape[0]

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))

    @staticmethod
    def box(halfwidth, dim: int | None = None) -> "Polytope":
        """Axis-aligned box |x_i| <= halfwidth_i."""
        hw = np.asarray(halfwidth, dtype=float).ravel()
        if hw.size == 1 and dim is not None:
            hw = np.full(dim, hw[0])
        n = hw.size
        H = np.vstack([np.eye(n), -np.eye(n)])
        return Polytope(H, np.concatenate([hw, hw]))


@dataclass(frozen=True)
class BigMConfig:
    """Big-M constants; scalars broadcast per row, None means auto-sized.

    m1 bounds the controller duals, m2 the controller primal slacks, m3 the
    objective linearization terms, m4 the outer primal slacks, and m5 the
    outer duals.
    """
    m1: float | np.ndarray | None = None
    m2: float | np.ndarray | None = None
    m3: float | np.ndarray | None = None
    m4: float | np.ndarray | None = None
    m5: float | np.ndarray | None = None

    def __post_init__(self):
        for name in ("m1", "m2", "m3", "m4", "m5"):
            v = getattr(self, name)
            if v is None:
                continue
            arr = np.asarray(v, dtype=float)
            if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"big-M constant {name} must be positive and finite")


@dataclass(frozen=True)
class MpcSpec:
    """Complete MPC design plus the analysis region for verification."""
    system: LinearSystem
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    state_con: Polytope | None = None
    input_con: Polytope | None = None
    terminal_con: Polytope | None = None
    blocking: np.ndarray | None = None
    analysis_region: Polytope | None = None

    def __post_init__(self):
        nx, nu = self.system.nx, self.system.nu
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.N < 1:
            raise DimensionError("horizon must be >= 1")
        if Q.shape != (nx, nx):
            raise DimensionError(f"Q must be {nx}x{nx}, got {Q.shape}")
        if R.shape != (nu, nu):
            raise DimensionError(f"R must be {nu}x{nu}, got {R.shape}")
        if P.shape != (nx, nx):
            raise DimensionError(f"P must be {nx}x{nx}, got {P.shape}")
        try:
            np.linalg.cholesky(0.5 * (R + R.T))
        except np.linalg.LinAlgError as e:
            raise IndefinitenessError("R must be positive definite") from e
        for name, p, d in (("state", self.state_con, nx), ("input", self.input_con, nu),
                           ("terminal", self.terminal_con, nx)):
            if p is not None and p.dim != d:
                raise DimensionError(f"{name} constraint dimension {p.dim} != {d}")
        if self.analysis_region is None:
            object.__setattr__(self, "analysis_region",
                               default_region(self.state_con, nx))
        if self.analysis_region.dim != nx:
            raise DimensionError(f"analysis region dimension {self.analysis_region.dim} != {nx}")
        if self.blocking is not None:
            T = np.atleast_2d(np.asarray(self.blocking, dtype=float))
            if T.shape[0] != self.N * nu:
                raise DimensionError(f"blocking matrix needs {self.N * nu} rows, got {T.shape[0]}")
            object.__setattr__(self, "blocking", _freeze(T))
        object.__setattr__(self, "Q", _freeze(Q))
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "P", _freeze(P))


def default_region(state_con: Polytope | None, nx: int) -> Polytope:
    """Analysis region fallback: the state polytope, or a +-10 box."""
    if state_con is not None and state_con.nrows > 0:
        return Polytope(state_con.H, state_con.h)
    return Polytope.box(DEFAULT_REGION_BOX, nx)


def _polytope_from_dict(d, name: str) -> Polytope:
    if not isinstance(d, dict) or "H" not in d or "h" not in d:
        raise ParseError(f"{name} must be an object with keys H and h")
    return Polytope(_as_matrix(d["H"], f"{name}.H"), _as_vector(d["h"], f"{name}.h"))


def load_spec(path) -> MpcSpec:
    """Read and validate a problem file, applying defaults."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}") from e
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> MpcSpec:
    for key in ("system", "horizon", "cost"):
        if key not in raw:
            raise ParseError(f"missing required key '{key}'")
    sysd = raw["system"]
    if "A" not in sysd or "B" not in sysd:
        raise ParseError("system must contain A and B")
    system = LinearSystem(_as_matrix(sysd["A"], "A"), _as_matrix(sysd["B"], "B"))
    try:
        N = int(raw["horizon"])
    except (TypeError, ValueError) as e:
        raise ParseError("horizon must be an integer") from e

    cost = raw["cost"]
    if "Q" not in cost or "R" not in cost:
        raise ParseError("cost must contain Q and R")
    Q = _as_matrix(cost["Q"], "Q")
    R = _as_matrix(cost["R"], "R")
    if "P" in cost and cost["P"] is not None:
        P = _as_matrix(cost["P"], "P")
    else:
        P = solve_dare(system, Q, R)

    cons = raw.get("constraints", {}) or {}
    state_con = _polytope_from_dict(cons["state"], "state") if "state" in cons else None
    input_con = _polytope_from_dict(cons["input"], "input") if "input" in cons else None
    terminal_con = _polytope_from_dict(cons["terminal"], "terminal") if "terminal" in cons else None

    blocking = _as_matrix(raw["blocking"], "blocking") if raw.get("blocking") is not None else None

    if raw.get("analysis_region") is not None:
        region = _polytope_from_dict(raw["analysis_region"], "analysis_region")
    else:
        region = default_region(state_con, system.nx)

    return MpcSpec(system=system, N=N, Q=Q, R=R, P=P,
                   state_con=state_con, input_con=input_con,
                   terminal_con=terminal_con, blocking=blocking,
                   analysis_region=region)


def load_file_options(path) -> dict:
    """Solver-option keys of a problem file: 'bigm' and 'options' sub-dicts."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}") from e
    out = {}
    if isinstance(raw.get("bigm"), dict):
        out["bigm"] = raw["bigm"]
    if isinstance(raw.get("options"), dict):
        out["options"] = raw["options"]
    return out


def spec_to_dict(spec: MpcSpec) -> dict:
    def mat(M):
        return [list(map(float, row)) for row in np.atleast_2d(M)]

    def vec(v):
        return list(map(float, v))

    out = {
        "system": {"A": mat(spec.system.A), "B": mat(spec.system.B)},
        "horizon": int(spec.N),
        "cost": {"Q": mat(spec.Q), "R": mat(spec.R), "P": mat(spec.P)},
    }
    cons = {}
    for name, p in (("state", spec.state_con), ("input", spec.input_con),
                    ("terminal", spec.terminal_con)):
        if p is not None:
            cons[name] = {"H": mat(p.H), "h": vec(p.h)}
    if cons:
        out["constraints"] = cons
    if spec.blocking is not None:
        out["blocking"] = mat(spec.blocking)
    if spec.analysis_region is not None:
        out["analysis_region"] = {"H": mat(spec.analysis_region.H),
                                  "h": vec(spec.analysis_region.h)}
    return out


def save_spec(spec: MpcSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec), f, indent=1)
        f.write("\n")


def _is_psd(M: np.ndarray) -> bool:
    M = 0.5 * (M + M.T)
    shift = 1e-10 * (1.0 + float(np.abs(M).max()))
    try:
        np.linalg.cholesky(M + shift * np.eye(M.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False


def region_bounding_box(region: Polytope) -> tuple[np.ndarray, np.ndarray] | None:
    """Per-coordinate extremes of the region; None when unbounded or empty."""
    n = region.dim
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        for sign, dest in ((-1.0, hi), (1.0, lo)):
            sol = lp_solve(sign * e, Aineq=region.H, bineq=region.h)
            if sol.status != "optimal":
                return None
            dest[i] = sign * sol.objective if sign > 0 else -sol.objective
    return lo, hi


def validate_spec(spec: MpcSpec) -> list[str]:
    """All invariant checks as diagnostics; empty list means the spec is clean."""
    diags: list[str] = []
    nx, nu = spec.system.nx, spec.system.nu

    if not np.allclose(spec.Q, spec.Q.T, atol=1e-12):
        diags.append("Q is not symmetric")
    elif not _is_psd(spec.Q):
        diags.append("Q is not positive semidefinite")
    if not np.allclose(spec.R, spec.R.T, atol=1e-12):
        diags.append("R is not symmetric")
    if not np.allclose(spec.P, spec.P.T, atol=1e-12):
        diags.append("P is not symmetric")
    elif not _is_psd(spec.P):
        diags.append("P is not positive semidefinite")

    for name, p in (("state", spec.state_con), ("input", spec.input_con),
                    ("terminal", spec.terminal_con), ("analysis region", spec.analysis_region)):
        if p is None:
            continue
        zero_rows = np.flatnonzero(np.abs(p.H).max(axis=1) < 1e-14)
        for r in zero_rows:
            diags.append(f"{name} constraint row {r} is all zeros")

    if spec.blocking is not None:
        T = spec.blocking
        if not np.all(np.isin(T, (0.0, 1.0))):
            diags.append("blocking matrix has entries outside {0, 1}")
        else:
            rowsum = T.sum(axis=1)
            for r in np.flatnonzero(rowsum != 1):
                diags.append(f"blocking row {r} selects {int(rowsum[r])} inputs")
            for c in np.flatnonzero(T.sum(axis=0) < 1):
                diags.append(f"blocking column {c} selects no rows")

    region = spec.analysis_region
    if region is None or region.nrows == 0:
        diags.append("analysis region unbounded")
    else:
        box = region_bounding_box(region)
        if box is None:
            diags.append("analysis region unbounded")
    return diags
