"""
Data-driven policy iteration and regulator solve for one follower.

Nothing here touches A, B, D or E. The learner sees only the data matrices,
the output matrices (C, F) through the regulator basis, the cost weights and
an initial stabilizing gain.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datacollect import BasisFamily, DataMatrices, rank_condition, unvecs
from .exceptions import (
    ConvergenceError,
    CoorpError,
    DimensionError,
    ExcitationError,
    ExperimentError,
    InstabilityError,
    RegulatorError,
    remediation_hint,
)
from .linalg import as_matrix, is_positive_definite, lstsq_pivoted, min_trace_affine, symmetrize, unvec, vec
from .logger import setup_logger
from .plant import NoiseSpec, exploration_noise

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_MAX_ITERATIONS = 50
REGULATOR_TOLERANCE = 1e-4
MAX_CONDITION = 1e12


# ── One least-squares step ────────────────────────────────────────────────

def adp_solve_step(
    data: DataMatrices,
    K: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    max_condition: float = MAX_CONDITION,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Solve Psi theta = Phi for theta = [vecs(P_k); vec(K_k+1); vec(Lambda)].

    Lambda = (D - S(X_j))^T P_k is returned as a q x n matrix.

    Raises:
        ExcitationError: Psi is effectively rank deficient
        InstabilityError: The recovered P_k is not positive definite
    """
    K = as_matrix(K, "K")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    n, m, q = data.n, data.m, data.q
    if K.shape != (m, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionError(
            f"Expected K {m}x{n}, Q {n}x{n}, R {m}x{m}; got {K.shape}, {Q.shape}, {R.shape}"
        )

    I_n = np.eye(n)
    Psi = np.hstack([
        data.d_xx,
        -2.0 * data.G_xx @ np.kron(I_n, K.T @ R) - 2.0 * data.G_xu @ np.kron(I_n, R),
        -2.0 * data.G_xv,
    ])
    Phi = -data.G_xx @ vec(Q + K.T @ R @ K)

    theta, condition = lstsq_pivoted(Psi, Phi, max_condition)
    n_p = n * (n + 1) // 2
    P = symmetrize(unvecs(theta[:n_p], n))
    K_next = unvec(theta[n_p:n_p + m * n], m, n)
    Lam = unvec(theta[n_p + m * n:], q, n)

    if not is_positive_definite(P):
        raise InstabilityError(
            f"Learned value matrix is not positive definite (min eigenvalue "
            f"{np.min(np.linalg.eigvalsh(P)):.3e}) for the j={data.j} data; the data do not pin down the "
            f"value of the evaluated gain",
            source="data",
        )
    logger.debug(f"Least-squares step for j={data.j}: condition ~{condition:.2e}")
    return P, K_next, Lam


# ── Policy iteration on the j = 0 data ────────────────────────────────────

@dataclass
class FeedbackResult:
    P: np.ndarray
    K: np.ndarray           # terminal K_{k*+1}
    K_frozen: np.ndarray    # K_{k*}, the gain evaluated by the last step
    Lam0: np.ndarray
    iterations: int
    history: List[Dict[str, Optional[float]]] = field(default_factory=list)


def learn_feedback(
    data0: DataMatrices,
    K0: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    reference_P: Optional[np.ndarray] = None,
) -> FeedbackResult:
    """
    Repeat adp_solve_step on the j = 0 data until ||P_k - P_k-1||_F < tol.

    Each history entry records k, the step size ``delta`` (None on the first
    step) and, when a reference P is supplied, ``gap`` = ||P_k - P_ref||_F.

    Raises:
        ValueError: tol or max_iterations not positive
        ConvergenceError: max_iterations reached without meeting tol
    """
    if tol <= 0 or max_iterations < 1:
        raise ValueError(f"Need tol > 0 and max_iterations >= 1, got {tol}, {max_iterations}")

    K = as_matrix(K0, "K0")
    P_prev: Optional[np.ndarray] = None
    history: List[Dict[str, Optional[float]]] = []

    for k in range(1, max_iterations + 1):
        P, K_next, Lam0 = adp_solve_step(data0, K, Q, R)
        delta = float(np.linalg.norm(P - P_prev)) if P_prev is not None else None
        entry = {'k': k, 'delta': delta}
        if reference_P is not None:
            entry['gap'] = float(np.linalg.norm(P - reference_P))
        history.append(entry)
        if delta is not None:
            logger.debug(f"PI iteration {k}: ||P_k - P_k-1|| = {delta:.3e}")

        if P_prev is not None and delta < tol:
            return FeedbackResult(P, K_next, K, Lam0, k, history)
        P_prev, K = P, K_next

    last = history[-1]["delta"]
    raise ConvergenceError(
        f"Policy iteration did not reach tolerance {tol:g} in {max_iterations} iterations "
        f"(last step {last if last is None else format(last, '.3e')})",
        iterations=max_iterations,
    )


# ── Regulator from data ───────────────────────────────────────────────────

def extract_sylvester(
    Lams: Sequence[np.ndarray],
    P: np.ndarray,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    D_hat and S(X_j) for j >= 1 from the third solution blocks.

    Lambda_0 = D^T P because S(0) = 0, and S(X_j)^T P = Lambda_0 - Lambda_j.

    Returns:
        (D_hat, [S(X_1), ..., S(X_h+1)])
    """
    P_inv = np.linalg.inv(P)
    Lam0 = Lams[0]
    D_hat = P_inv @ Lam0.T
    sylvesters = [P_inv @ (Lam0 - Lam).T for Lam in Lams[1:]]
    return D_hat, sylvesters


def solve_regulator(
    basis: BasisFamily,
    sylvesters: Sequence[np.ndarray],
    P: np.ndarray,
    K: np.ndarray,
    R: np.ndarray,
    D_hat: np.ndarray,
    Qbar: Optional[np.ndarray] = None,
    Rbar: Optional[np.ndarray] = None,
    residual_tol: float = REGULATOR_TOLERANCE,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Minimum-trace regulator solution on the affine family X = X_1 + sum_j alpha_j X_j.

    S is linear, so S(X) = S(X_1) + sum_j alpha_j S(X_j); U then follows from
    S(X) = B_hat U + D_hat with B_hat = P^-1 K^T R.

    Returns:
        (X, U, alpha)

    Raises:
        RegulatorError: B_hat rank deficient or the equations inconsistent
    """
    K = as_matrix(K, "K")
    R = as_matrix(R, "R")
    m, n = K.shape
    X1 = basis.particular
    q = X1.shape[1]
    h = basis.h
    if len(sylvesters) != h + 1:
        raise DimensionError(f"Need {h + 1} Sylvester values, got {len(sylvesters)}")
    Qbar = np.eye(n) if Qbar is None else as_matrix(Qbar, "Qbar")
    Rbar = np.eye(m) if Rbar is None else as_matrix(Rbar, "Rbar")

    B_hat = np.linalg.solve(P, K.T @ R)
    if np.linalg.matrix_rank(B_hat) < m:
        raise RegulatorError(f"Recovered input matrix ({n}x{m}) is rank deficient; U cannot be recovered")

    G = np.hstack([
        np.column_stack([vec(S) for S in sylvesters[1:]]) if h else np.zeros((n * q, 0)),
        -np.kron(np.eye(q), B_hat),
    ])
    g = vec(D_hat - sylvesters[0])
    x_map = np.hstack([
        np.column_stack([vec(X) for X in basis.kernel]) if h else np.zeros((n * q, 0)),
        np.zeros((n * q, m * q)),
    ])
    u_map = np.hstack([np.zeros((m * q, h)), np.eye(m * q)])

    try:
        y, residual = min_trace_affine(G, g, vec(X1), x_map, u_map, Qbar, Rbar, q, residual_tol)
    except ValueError as e:
        raise RegulatorError(f"Regulator equations inconsistent with learned quantities: {e}") from e

    alpha = y[:h]
    U = unvec(y[h:], m, q)
    X = X1 + sum((a * Xj for a, Xj in zip(alpha, basis.kernel)), np.zeros_like(X1))
    logger.debug(f"Regulator solved with residual {residual:.2e}")
    return X, U, alpha


def feedforward_gain(K: np.ndarray, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """L = U + K X"""
    return as_matrix(U, "U") + as_matrix(K, "K") @ as_matrix(X, "X")


def control_law(K: np.ndarray, L: np.ndarray, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """u = -K x + L eta"""
    return -np.asarray(K) @ np.asarray(x, dtype=float) + np.asarray(L) @ np.asarray(eta, dtype=float)


class LinearController:
    """
    Callable (t, x, eta) -> u applying -K x + L eta plus optional exploration noise.

    Without L the feedforward term is dropped, which is the behavior policy
    used while collecting data.
    """

    def __init__(self, K: np.ndarray, L: Optional[np.ndarray] = None, noise: Optional[NoiseSpec] = None):
        self.K = as_matrix(K, "K")
        self.L = np.zeros((self.K.shape[0], 0)) if L is None else as_matrix(L, "L")
        self.noise = noise

    def __call__(self, t: float, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        u = -self.K @ x
        if self.L.shape[1]:
            u = u + self.L @ eta
        if self.noise is not None:
            u = u + exploration_noise(t, self.noise)
        return u


# ── Per-agent results ─────────────────────────────────────────────────────

@dataclass
class LearnedPolicy:
    """Learned gains and regulator solution of one follower"""
    agent: int
    P: np.ndarray
    K: np.ndarray
    L: np.ndarray
    X: np.ndarray
    U: np.ndarray
    alpha: np.ndarray
    iterations: int
    history: List[Dict[str, Optional[float]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'agent': self.agent,
            'P': self.P.tolist(),
            'K': self.K.tolist(),
            'L': self.L.tolist(),
            'X': self.X.tolist(),
            'U': self.U.tolist(),
            'alpha': self.alpha.tolist(),
            'iterations': self.iterations,
            'history': [dict(entry) for entry in self.history],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LearnedPolicy":
        return cls(
            agent=int(data['agent']),
            P=np.array(data['P'], dtype=float),
            K=np.array(data['K'], dtype=float),
            L=np.array(data['L'], dtype=float),
            X=np.array(data['X'], dtype=float),
            U=np.array(data['U'], dtype=float),
            alpha=np.array(data['alpha'], dtype=float),
            iterations=int(data['iterations']),
            history=[dict(entry) for entry in data.get('history', [])],
        )


class AgentLearner:
    """
    Runs the full learning pass for one follower: rank checks, policy
    iteration on the j = 0 data, per-j solves at the frozen gain, Sylvester
    extraction, regulator solve and feedforward assembly.
    """

    def __init__(
        self,
        agent: int,
        Q: np.ndarray,
        R: np.ndarray,
        Qbar: Optional[np.ndarray] = None,
        Rbar: Optional[np.ndarray] = None,
        tol: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        log_level: int = logging.INFO,
    ):
        self.agent = agent
        self.Q = as_matrix(Q, "Q")
        self.R = as_matrix(R, "R")
        self.Qbar = Qbar
        self.Rbar = Rbar
        self.tol = tol
        self.max_iterations = max_iterations
        self.logger = setup_logger(__name__, log_level)

    def check_excitation(self, family: Sequence[DataMatrices]) -> None:
        for data in family:
            check = rank_condition(data)
            if not check.ok:
                raise ExcitationError(
                    f"Agent {self.agent}: rank condition fails for j={data.j} "
                    f"(rank {check.rank}, required {check.required})",
                    required_rank=check.required,
                    achieved_rank=check.rank,
                )

    def learn(
        self,
        family: Sequence[DataMatrices],
        basis: BasisFamily,
        K0: np.ndarray,
        reference_P: Optional[np.ndarray] = None,
    ) -> LearnedPolicy:
        if len(family) != len(basis):
            raise DimensionError(f"Got {len(family)} data sets for {len(basis)} basis elements")
        self.check_excitation(family)

        fb = learn_feedback(family[0], K0, self.Q, self.R, self.tol, self.max_iterations, reference_P)
        self.logger.info(f"Agent {self.agent}: policy iteration converged in {fb.iterations} iterations")

        Lams = [fb.Lam0]
        for data in family[1:]:
            _, _, Lam = adp_solve_step(data, fb.K_frozen, self.Q, self.R)
            Lams.append(Lam)

        D_hat, sylvesters = extract_sylvester(Lams, fb.P)
        X, U, alpha = solve_regulator(
            basis, sylvesters, fb.P, fb.K, self.R, D_hat, self.Qbar, self.Rbar
        )
        L = feedforward_gain(fb.K, X, U)
        self.logger.info(f"Agent {self.agent}: L = {np.array2string(L.ravel(), precision=4)}")
        return LearnedPolicy(self.agent, fb.P, fb.K, L, X, U, alpha, fb.iterations, fb.history)


@dataclass
class LearningTask:
    learner: AgentLearner
    family: Sequence[DataMatrices]
    basis: BasisFamily
    K0: np.ndarray
    reference_P: Optional[np.ndarray] = None


def _run_task(task: LearningTask) -> LearnedPolicy:
    return task.learner.learn(task.family, task.basis, task.K0, task.reference_P)


def learn_all(tasks: Sequence[LearningTask], max_workers: Optional[int] = None) -> List[LearnedPolicy]:
    """
    Learn every follower in a thread pool; results follow the task order.

    Raises:
        ExperimentError: Wrapping the first failing agent's error (in task order)
    """
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(_run_task, task) for task in tasks]
        policies = []
        for task, future in zip(tasks, futures):
            try:
                policies.append(future.result())
            except CoorpError as e:
                raise ExperimentError(
                    str(e), phase='learn', agent=task.learner.agent, hint=remediation_hint(e)
                ) from e
    return policies
