"""Dense condensing of the horizon problem into a compact QP.

With states eliminated through the dynamics, the horizon objective becomes

    V(x, U) = 1/2 U'HU + U'Gx + 1/2 x'Qbar x

subject to  E x + F U <= b.  H, G and Qbar carry a factor 2 so that V
equals the plain sum of stage costs x'Qx + u'Ru plus the terminal cost.
Constraint rows are stacked as state constraints for stages 1 .. N-1,
terminal rows at stage N, and input constraints for stages 0 .. N-1;
``row_tags`` records the provenance of each row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .model import MpcSpec

# row provenance kinds
ROW_STATE = "state"
ROW_INPUT = "input"
ROW_TERMINAL = "terminal"
ROW_REGION = "region"


@dataclass(frozen=True)
class CondensedQp:
    H: np.ndarray
    G: np.ndarray
    Qbar: np.ndarray
    E: np.ndarray
    F: np.ndarray
    b: np.ndarray
    nU: int
    nlam: int
    row_tags: tuple[tuple[str, int], ...]

    def objective(self, x, U) -> float:
        x = np.asarray(x, dtype=float).ravel()
        U = np.asarray(U, dtype=float).ravel()
        return float(0.5 * U @ self.H @ U + U @ self.G @ x + 0.5 * x @ self.Qbar @ x)


def prediction_matrices(system, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked maps X = Gamma x0 + S U for X = [x_1; ...; x_N]."""
    A, B = system.A, system.B
    nx, nu = system.nx, system.nu
    Gamma = np.zeros((N * nx, nx))
    S = np.zeros((N * nx, N * nu))
    Apow = np.eye(nx)
    for i in range(N):
        Apow = A @ Apow  # A^{i+1}
        Gamma[i * nx:(i + 1) * nx, :] = Apow
    for j in range(N):
        AB = B.copy()
        for i in range(j, N):
            S[i * nx:(i + 1) * nx, j * nu:(j + 1) * nu] = AB
            AB = A @ AB
    return Gamma, S


def condense(spec: MpcSpec) -> CondensedQp:
    """Build the compact QP of the controller; applies move blocking if set."""
    system = spec.system
    nx, nu, N = system.nx, system.nu, spec.N
    Gamma, S = prediction_matrices(system, N)

    Qt = np.zeros((N * nx, N * nx))
    for i in range(N - 1):
        Qt[i * nx:(i + 1) * nx, i * nx:(i + 1) * nx] = spec.Q
    Qt[(N - 1) * nx:, (N - 1) * nx:] = spec.P
    Rt = np.kron(np.eye(N), spec.R)

    H = 2.0 * (S.T @ Qt @ S + Rt)
    G = 2.0 * (S.T @ Qt @ Gamma)
    Qbar = 2.0 * (spec.Q + Gamma.T @ Qt @ Gamma)
    H = 0.5 * (H + H.T)
    Qbar = 0.5 * (Qbar + Qbar.T)

    rows_E: list[np.ndarray] = []
    rows_F: list[np.ndarray] = []
    rows_b: list[np.ndarray] = []
    tags: list[tuple[str, int]] = []

    if spec.state_con is not None:
        Hs, hs = spec.state_con.H, spec.state_con.h
        for i in range(1, N):
            blk = slice((i - 1) * nx, i * nx)
            rows_E.append(Hs @ Gamma[blk, :])
            rows_F.append(Hs @ S[blk, :])
            rows_b.append(hs)
            tags.extend((ROW_STATE, i) for _ in range(Hs.shape[0]))

    if spec.terminal_con is not None:
        Ht, ht = spec.terminal_con.H, spec.terminal_con.h
        blk = slice((N - 1) * nx, N * nx)
        rows_E.append(Ht @ Gamma[blk, :])
        rows_F.append(Ht @ S[blk, :])
        rows_b.append(ht)
        tags.extend((ROW_TERMINAL, N) for _ in range(Ht.shape[0]))

    if spec.input_con is not None:
        Hu, hu = spec.input_con.H, spec.input_con.h
        for i in range(N):
            Fi = np.zeros((Hu.shape[0], N * nu))
            Fi[:, i * nu:(i + 1) * nu] = Hu
            rows_E.append(np.zeros((Hu.shape[0], nx)))
            rows_F.append(Fi)
            rows_b.append(hu)
            tags.extend((ROW_INPUT, i) for _ in range(Hu.shape[0]))

    if rows_E:
        E = np.vstack(rows_E)
        F = np.vstack(rows_F)
        b = np.concatenate(rows_b)
    else:
        E = np.zeros((0, nx))
        F = np.zeros((0, N * nu))
        b = np.zeros(0)

    qp = CondensedQp(H=H, G=G, Qbar=Qbar, E=E, F=F, b=b,
                     nU=N * nu, nlam=b.size, row_tags=tuple(tags))
    if spec.blocking is not None:
        qp = apply_blocking(qp, spec.blocking)
    return qp


def apply_blocking(qp: CondensedQp, T) -> CondensedQp:
    """Substitute U = T Uhat, shrinking the decision vector to T's columns."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape[0] != qp.nU:
        raise DimensionError(f"blocking matrix needs {qp.nU} rows, got {T.shape[0]}")
    H = T.T @ qp.H @ T
    H = 0.5 * (H + H.T)
    # a rank-deficient substitution leaves the blocked Hessian singular
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as e:
        raise DimensionError("blocking matrix makes the Hessian singular "
                             "(zero or dependent columns)") from e
    return CondensedQp(H=H, G=T.T @ qp.G, Qbar=qp.Qbar,
                       E=qp.E, F=qp.F @ T, b=qp.b,
                       nU=T.shape[1], nlam=qp.nlam, row_tags=qp.row_tags)


def rollout_objective(spec: MpcSpec, x, U) -> float:
    """Oracle: explicit state propagation summing stage costs.

    U is the full (unblocked) input sequence of length N*nu.
    """
    x = np.asarray(x, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    nx, nu = spec.system.nx, spec.system.nu
    if U.size != spec.N * nu:
        raise DimensionError("U has wrong length for rollout")
    total = float(x @ spec.Q @ x)
    xi = x
    for i in range(spec.N):
        ui = U[i * nu:(i + 1) * nu]
        total += float(ui @ spec.R @ ui)
        xi = spec.system.A @ xi + spec.system.B @ ui
        W = spec.P if i == spec.N - 1 else spec.Q
        total += float(xi @ W @ xi)
    return total


def rollout_feasible(spec: MpcSpec, x, U, tol: float = 1e-9) -> bool:
    """Oracle: check all stage constraints along the propagated trajectory."""
    x = np.asarray(x, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    nx, nu = spec.system.nx, spec.system.nu
    xi = x
    for i in range(spec.N):
        ui = U[i * nu:(i + 1) * nu]
        if spec.input_con is not None and not spec.input_con.contains(ui, tol):
            return False
        xi = spec.system.A @ xi + spec.system.B @ ui
        if i < spec.N - 1 and spec.state_con is not None and not spec.state_con.contains(xi, tol):
            return False
    if spec.terminal_con is not None and not spec.terminal_con.contains(xi, tol):
        return False
    return True
