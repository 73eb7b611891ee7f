"""
Model-based ground truth: Lyapunov solves, Kleinman iteration, exact
regulator equations and the optimal feedback/feedforward pair.

Used by tests and by the experiment report; the learner never imports it.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .exceptions import AssumptionError, ConvergenceError, DimensionError, InstabilityError
from .linalg import as_matrix, min_trace_affine, spectral_abscissa, symmetrize, unvec, vec
from .plant import AgentModel, pole_placement_gain

logger = logging.getLogger(__name__)

KLEINMAN_TOLERANCE = 1e-11
KLEINMAN_MAX_ITERATIONS = 100
REGULATOR_TOLERANCE = 1e-9


def state_weight(model: AgentModel, Q: np.ndarray) -> np.ndarray:
    """
    A p x p weight is an output weight and is lifted to C^T Q C; an n x n
    weight is used as is.
    """
    Q = as_matrix(Q, "Q")
    if Q.shape == (model.p, model.p):
        return model.C.T @ Q @ model.C
    if Q.shape == (model.n, model.n):
        return Q
    raise DimensionError(
        f"Agent {model.index}: Q must be {model.p}x{model.p} (output) or {model.n}x{model.n} (state), got {Q.shape}"
    )


def lyapunov_solve(A_cl: np.ndarray, W: np.ndarray) -> np.ndarray:
    """
    Symmetric P with P A_cl + A_cl^T P + W = 0.

    Raises:
        InstabilityError: A_cl is not Hurwitz
    """
    A_cl = as_matrix(A_cl, "A_cl")
    W = as_matrix(W, "W")
    n = A_cl.shape[0]
    if W.shape != (n, n):
        raise DimensionError(f"W must be {n}x{n}, got {W.shape}")
    abscissa = spectral_abscissa(A_cl)
    if abscissa >= 0:
        raise InstabilityError(f"Closed-loop matrix is not Hurwitz (spectral abscissa {abscissa:.4g})")
    I_n = np.eye(n)
    lhs = np.kron(I_n, A_cl.T) + np.kron(A_cl.T, I_n)
    P = unvec(np.linalg.solve(lhs, -vec(W)), n, n)
    return symmetrize(P)


def are_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray) -> float:
    """Frobenius norm of A^T P + P A + Q - P B R^-1 B^T P"""
    M = A.T @ P + P @ A + Q - P @ B @ np.linalg.solve(R, B.T @ P)
    return float(np.linalg.norm(M))


class KleinmanResult(NamedTuple):
    P: np.ndarray
    K: np.ndarray
    iterations: int
    iterates: List[np.ndarray]


def kleinman(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    K0: np.ndarray,
    tol: float = KLEINMAN_TOLERANCE,
    max_iterations: int = KLEINMAN_MAX_ITERATIONS,
) -> KleinmanResult:
    """
    Policy iteration on the true model.

    Stops when ||P_k - P_k-1||_F < tol * max(1, ||P_k||_F).

    Raises:
        InstabilityError: K0 is not stabilizing
        ConvergenceError: max_iterations reached
    """
    A, B, Q, R = (as_matrix(M, name) for M, name in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")))
    K = as_matrix(K0, "K0")
    iterates: List[np.ndarray] = []
    P_prev = None
    for k in range(1, max_iterations + 1):
        P = lyapunov_solve(A - B @ K, Q + K.T @ R @ K)
        iterates.append(P)
        K = np.linalg.solve(R, B.T @ P)
        if P_prev is not None and np.linalg.norm(P - P_prev) < tol * max(1.0, np.linalg.norm(P)):
            logger.debug(f"Kleinman converged in {k} iterations")
            return KleinmanResult(P, K, k, iterates)
        P_prev = P
    raise ConvergenceError(f"Kleinman iteration did not converge in {max_iterations} iterations", max_iterations)


def exact_regulator(
    A: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    D: np.ndarray,
    F: np.ndarray,
    E: np.ndarray,
    Qbar: Optional[np.ndarray] = None,
    Rbar: Optional[np.ndarray] = None,
    residual_tol: float = REGULATOR_TOLERANCE,
):
    """
    Minimum-trace solution of X E = A X + B U + D, 0 = C X + F.

    Returns:
        (X, U)

    Raises:
        AssumptionError: The regulator equations have no solution
    """
    A, B, C, D, F, E = (as_matrix(M) for M in (A, B, C, D, F, E))
    n, m = B.shape
    q = E.shape[0]
    I_q = np.eye(q)
    G = np.vstack([
        np.hstack([np.kron(E.T, np.eye(n)) - np.kron(I_q, A), -np.kron(I_q, B)]),
        np.hstack([np.kron(I_q, C), np.zeros((C.shape[0] * q, m * q))]),
    ])
    g = np.concatenate([vec(D), -vec(F)])
    x_map = np.hstack([np.eye(n * q), np.zeros((n * q, m * q))])
    u_map = np.hstack([np.zeros((m * q, n * q)), np.eye(m * q)])
    Qbar = np.eye(n) if Qbar is None else as_matrix(Qbar, "Qbar")
    Rbar = np.eye(m) if Rbar is None else as_matrix(Rbar, "Rbar")
    try:
        y, _ = min_trace_affine(G, g, np.zeros(n * q), x_map, u_map, Qbar, Rbar, q, residual_tol)
    except ValueError as e:
        raise AssumptionError(f"Regulator equations have no solution: {e}") from e
    return unvec(y[:n * q], n, q), unvec(y[n * q:], m, q)


@dataclass
class OracleSolution:
    agent: int
    P: np.ndarray
    K: np.ndarray
    X: np.ndarray
    U: np.ndarray
    L: np.ndarray
    iterations: int = 0
    iterates: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            'agent': self.agent,
            'P': self.P.tolist(),
            'K': self.K.tolist(),
            'X': self.X.tolist(),
            'U': self.U.tolist(),
            'L': self.L.tolist(),
            'iterations': self.iterations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OracleSolution":
        return cls(
            agent=int(data['agent']),
            P=np.array(data['P'], dtype=float),
            K=np.array(data['K'], dtype=float),
            X=np.array(data['X'], dtype=float),
            U=np.array(data['U'], dtype=float),
            L=np.array(data['L'], dtype=float),
            iterations=int(data.get('iterations', 0)),
        )


def optimal_policy(
    model: AgentModel,
    E: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    Qbar: Optional[np.ndarray] = None,
    Rbar: Optional[np.ndarray] = None,
    K0: Optional[np.ndarray] = None,
) -> OracleSolution:
    """Kleinman plus the exact regulator, composed into L* = U* + K* X*"""
    Qx = state_weight(model, Q)
    if K0 is None:
        K0 = pole_placement_gain(model)
    P, K, iterations, iterates = kleinman(model.A, model.B, Qx, R, K0)
    X, U = exact_regulator(model.A, model.B, model.C, model.D, model.F, E, Qbar, Rbar)
    return OracleSolution(model.index, P, K, X, U, U + K @ X, iterations, iterates)
