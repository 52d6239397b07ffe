"""Finite-horizon LQ gains, DARE solution, and spectral radius."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergenceError, SingularityError

DARE_TOL = 1e-10
DARE_MAX_ITER = 10000


@dataclass
class LqSolution:
    """Feedback solution of a finite- or infinite-horizon LQ problem.

    ``P`` is the cost-to-go matrix at the first stage (the DARE solution in
    the infinite-horizon case), ``L`` the first-stage feedback with the
    convention u = L x, and ``gains`` the per-stage feedbacks L_0 ... L_{N-1}.
    """
    P: np.ndarray
    L: np.ndarray
    gains: list[np.ndarray] = field(default_factory=list)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def riccati_finite(system, Q, R, P_terminal, N: int) -> LqSolution:
    """Backward Riccati recursion over N stages with terminal weight P_terminal.

    Returns the stage gains and the receding-horizon gain L = L_0, matching
    the minimizer of the condensed horizon problem (u = L_0 x equals the
    first input block of -H^{-1} G x).
    """
    A, B = np.asarray(system.A, dtype=float), np.asarray(system.B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if N < 1:
        raise ValueError("horizon must be >= 1")
    P = _sym(np.asarray(P_terminal, dtype=float).copy())
    gains: list[np.ndarray] = []
    for _ in range(N):
        S = _sym(R + B.T @ P @ B)
        try:
            K = np.linalg.solve(S, B.T @ P @ A)
        except np.linalg.LinAlgError as e:
            raise SingularityError("R + B'PB is numerically singular") from e
        gains.append(-K)
        P = _sym(Q + A.T @ P @ A - A.T @ P @ B @ K)
    gains.reverse()
    return LqSolution(P=P, L=gains[0], gains=gains)


def solve_dare(system, Q, R) -> np.ndarray:
    """Fixed-point Riccati iteration for the discrete algebraic Riccati equation.

    Terminates when the residual ||P - (A'PA - A'PB(R+B'PB)^{-1}B'PA + Q)||_inf
    drops below 1e-10 * (1 + ||P||_inf).
    """
    A, B = np.asarray(system.A, dtype=float), np.asarray(system.B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    for _ in range(DARE_MAX_ITER):
        S = _sym(R + B.T @ P @ B)
        try:
            K = np.linalg.solve(S, B.T @ P @ A)
        except np.linalg.LinAlgError as e:
            raise SingularityError("R + B'PB is numerically singular") from e
        P_next = _sym(Q + A.T @ P @ A - A.T @ P @ B @ K)
        if dare_residual(system, Q, R, P_next) <= DARE_TOL * (1.0 + np.abs(P_next).max()):
            return P_next
        P = P_next
    raise NoConvergenceError(f"Riccati iteration did not converge in {DARE_MAX_ITER} steps")


def dare_residual(system, Q, R, P) -> float:
    """Infinity norm of P - (A'PA - A'PB(R+B'PB)^{-1}B'PA + Q)."""
    A, B = np.asarray(system.A, dtype=float), np.asarray(system.B, dtype=float)
    S = _sym(np.asarray(R, dtype=float) + B.T @ P @ B)
    K = np.linalg.solve(S, B.T @ P @ A)
    rhs = np.asarray(Q, dtype=float) + A.T @ P @ A - A.T @ P @ B @ K
    return float(np.abs(P - rhs).max())


def dare_gain(system, Q, R) -> LqSolution:
    """DARE solution together with the steady-state feedback u = L x."""
    P = solve_dare(system, Q, R)
    A, B = np.asarray(system.A, dtype=float), np.asarray(system.B, dtype=float)
    S = _sym(np.asarray(R, dtype=float) + B.T @ P @ B)
    L = -np.linalg.solve(S, B.T @ P @ A)
    return LqSolution(P=P, L=L, gains=[L])


def spectral_radius(M) -> float:
    """Largest eigenvalue magnitude of a square matrix (n <= 50)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got shape {M.shape}")
    if M.shape[0] > 50:
        raise ValueError("spectral_radius supports n <= 50")
    if M.shape[0] == 0:
        return 0.0
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as e:
        raise NoConvergenceError("eigenvalue iteration failed") from e
    return float(np.abs(ev).max())
