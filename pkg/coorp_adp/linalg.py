"""
Dense linear-algebra helpers shared by the learner and the model-based oracle.

Column-major ``vec`` is used throughout, so vec(A X B) = (B^T kron A) vec(X).
"""

import logging
from typing import Tuple

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, ExcitationError

logger = logging.getLogger(__name__)


def vec(M: np.ndarray) -> np.ndarray:
    """Stack the columns of M into one vector"""
    return np.asarray(M, dtype=float).reshape(-1, order='F')


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of vec for a rows x cols matrix"""
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise DimensionError(f"Cannot reshape {v.size} entries into {rows}x{cols}")
    return v.reshape((rows, cols), order='F')


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def is_positive_definite(M: np.ndarray) -> bool:
    """Cholesky-based definiteness test on the symmetric part"""
    try:
        np.linalg.cholesky(symmetrize(M))
    except np.linalg.LinAlgError:
        return False
    return True


def spectral_abscissa(M: np.ndarray) -> float:
    """Largest real part of the eigenvalues of M"""
    return float(np.max(np.linalg.eigvals(M).real))


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce scalars/vectors/lists to a 2-D float array"""
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def lstsq_pivoted(
    Psi: np.ndarray,
    Phi: np.ndarray,
    max_condition: float = 1e12,
) -> Tuple[np.ndarray, float]:
    """
    Least squares through a column-pivoted QR factorization.

    The ratio of the largest to the smallest diagonal entry of the triangular
    factor estimates the condition number; above ``max_condition`` the system is
    treated as rank deficient.

    Returns:
        (solution, condition estimate)

    Raises:
        ExcitationError: If the estimated condition number exceeds max_condition
    """
    rows, cols = Psi.shape
    if rows < cols:
        raise ExcitationError(
            f"Only {rows} data rows for {cols} unknowns", required_rank=cols, achieved_rank=rows
        )
    Qf, Rf, piv = scipy.linalg.qr(Psi, mode='economic', pivoting=True)
    diag = np.abs(np.diag(Rf))
    condition = float(diag[0] / diag[-1]) if diag[-1] > 0 else float('inf')
    if condition > max_condition:
        achieved = int(np.sum(diag > diag[0] / max_condition))
        raise ExcitationError(
            f"Least-squares system effectively rank deficient (condition ~{condition:.3e})",
            required_rank=cols,
            achieved_rank=achieved,
        )
    permuted = scipy.linalg.solve_triangular(Rf, Qf.T @ Phi)
    solution = np.empty_like(permuted)
    solution[piv] = permuted
    return solution, condition


def min_trace_affine(
    G: np.ndarray,
    g: np.ndarray,
    x_offset: np.ndarray,
    x_map: np.ndarray,
    u_map: np.ndarray,
    Qbar: np.ndarray,
    Rbar: np.ndarray,
    q: int,
    residual_tol: float,
) -> Tuple[np.ndarray, float]:
    """
    Minimize Tr(X^T Qbar X + U^T Rbar U) over the solutions y of G y = g.

    X and U are affine in y: vec(X) = x_offset + x_map y and vec(U) = u_map y.
    The solution set is parametrized as y0 + N z and the convex quadratic in z is
    solved in closed form.

    Returns:
        (minimizing y, residual norm of G y - g)

    Raises:
        DimensionError: If the weights have the wrong shape
        ValueError: If G y = g is inconsistent beyond residual_tol
    """
    n = Qbar.shape[0]
    m = Rbar.shape[0]
    if x_map.shape[0] != n * q or u_map.shape[0] != m * q:
        raise DimensionError("Weight dimensions do not match the regulator unknowns")

    y0, *_ = np.linalg.lstsq(G, g, rcond=None)
    residual = float(np.linalg.norm(G @ y0 - g))
    if residual > residual_tol:
        raise ValueError(f"Linear system inconsistent: residual {residual:.3e}")

    N = scipy.linalg.null_space(G)
    if N.shape[1] > 0:
        Wx = np.kron(np.eye(q), Qbar)
        Wu = np.kron(np.eye(q), Rbar)
        Mx = x_map @ N
        Mu = u_map @ N
        cx = x_offset + x_map @ y0
        cu = u_map @ y0
        H = Mx.T @ Wx @ Mx + Mu.T @ Wu @ Mu
        rhs = -(Mx.T @ Wx @ cx + Mu.T @ Wu @ cu)
        z = scipy.linalg.solve(symmetrize(H), rhs, assume_a='pos')
        y0 = y0 + N @ z
        residual = float(np.linalg.norm(G @ y0 - g))
        logger.debug(f"Minimized trace objective over {N.shape[1]} free directions")

    return y0, residual
