"""
Distributed adaptive observer for a harmonic-oscillator leader.

Each follower keeps an exostate estimate eta_i and frequency estimates w_hat_i.
Components are paired (2r-1, 2r) in 1-based terms, i.e. (2r, 2r+1) here.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import DimensionError
from .topology import CommGraph

logger = logging.getLogger(__name__)


def _pairs(vec: np.ndarray) -> np.ndarray:
    """View the trailing axis (length q) as q/2 pairs"""
    if vec.shape[-1] % 2:
        raise DimensionError(f"Exostate dimension must be even, got {vec.shape[-1]}")
    return vec.reshape(vec.shape[:-1] + (vec.shape[-1] // 2, 2))


def skew_apply(w: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """
    Multiply by bdiag([[0, w_r], [-w_r, 0]]) without forming the matrix.

    Works on a single vector (w: q/2, vec: q) or row-wise on stacks
    (w: N x q/2, vec: N x q).
    """
    p = _pairs(vec)
    out = np.empty_like(p)
    out[..., 0] = w * p[..., 1]
    out[..., 1] = -w * p[..., 0]
    return out.reshape(vec.shape)


def assemble_Ehat(w_hat: Sequence[float]) -> np.ndarray:
    """Block-diagonal skew matrix built from frequency estimates"""
    w_hat = np.asarray(w_hat, dtype=float).ravel()
    q = 2 * w_hat.size
    E = np.zeros((q, q))
    for r, w in enumerate(w_hat):
        E[2 * r, 2 * r + 1] = w
        E[2 * r + 1, 2 * r] = -w
    return E


@dataclass
class ObserverState:
    """Exostate estimate eta (q) and frequency estimates w_hat (q/2)"""
    eta: np.ndarray
    w_hat: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).ravel()
        self.w_hat = np.asarray(self.w_hat, dtype=float).ravel()
        if self.eta.size != 2 * self.w_hat.size:
            raise DimensionError(
                f"eta has {self.eta.size} entries but w_hat has {self.w_hat.size} (need q = 2 * q/2)"
            )

    @property
    def Ehat(self) -> np.ndarray:
        return assemble_Ehat(self.w_hat)


@dataclass(frozen=True)
class ObserverGains:
    """
    a: positive entries building the Hurwitz diagonal A_m = -bdiag(a_r I_2)
    kappa: positive adaptation gains
    """
    a: Tuple[float, ...]
    kappa: Tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in np.ravel(self.a))
        kappa = tuple(float(x) for x in np.ravel(self.kappa))
        if len(a) != len(kappa):
            raise DimensionError(f"a has {len(a)} entries but kappa has {len(kappa)}")
        if any(x <= 0 for x in a):
            raise ValueError(f"All a_r must be positive so A_m is Hurwitz, got {a}")
        if any(x <= 0 for x in kappa):
            raise ValueError(f"All kappa_r must be positive, got {kappa}")
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'kappa', kappa)

    @property
    def a_expanded(self) -> np.ndarray:
        """Diagonal of -A_m, one entry per exostate component"""
        return np.repeat(np.asarray(self.a), 2)

    @property
    def A_m(self) -> np.ndarray:
        return -np.diag(self.a_expanded)


def local_error(
    eta_i: np.ndarray,
    neighbor_etas: Sequence[Tuple[float, np.ndarray]],
    m_ii: float,
    v: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    eps_i = sum_j a_ij (eta_i - eta_j) + m_ii (eta_i - v)

    Raises:
        ValueError: If the follower is a target (m_ii = 1) but v is absent
    """
    eta_i = np.asarray(eta_i, dtype=float)
    eps = np.zeros_like(eta_i)
    for weight, eta_j in neighbor_etas:
        eps += weight * (eta_i - np.asarray(eta_j, dtype=float))
    if m_ii:
        if v is None:
            raise ValueError("Target follower needs the leader state v")
        eps += m_ii * (eta_i - np.asarray(v, dtype=float))
    return eps


def observer_rhs(
    state: ObserverState,
    eps: np.ndarray,
    gains: ObserverGains,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    eta_dot = Ehat eta + (A_m - Ehat) eps
    w_hat_dot_r = kappa_r (eta_{2r-1} eps_{2r} - eta_{2r} eps_{2r-1})
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape != state.eta.shape:
        raise DimensionError(f"eps shape {eps.shape} does not match eta shape {state.eta.shape}")
    eta_dot = (
        skew_apply(state.w_hat, state.eta)
        - gains.a_expanded * eps
        - skew_apply(state.w_hat, eps)
    )
    eta_p = _pairs(state.eta)
    eps_p = _pairs(eps)
    w_dot = np.asarray(gains.kappa) * (eta_p[:, 0] * eps_p[:, 1] - eta_p[:, 1] * eps_p[:, 0])
    return eta_dot, w_dot


class ObserverNetwork:
    """
    All followers' observers stacked: eta is N x q, w_hat is N x q/2.

    The local errors of the whole network are (L + M) eta - M 1 v^T, evaluated
    from one consistent snapshot of every follower's estimate.
    """

    def __init__(self, graph: CommGraph, gains: ObserverGains):
        self.graph = graph
        self.gains = gains
        self.H = graph.laplacian() + graph.target_matrix()
        self.m = np.diag(graph.target_matrix()).copy()
        self.kappa = np.asarray(gains.kappa)
        self.a_expanded = gains.a_expanded

    @property
    def num_followers(self) -> int:
        return self.graph.num_followers

    @property
    def q(self) -> int:
        return 2 * len(self.gains.a)

    def local_errors(self, etas: np.ndarray, v: np.ndarray) -> np.ndarray:
        """N x q local observation errors"""
        return self.H @ etas - np.outer(self.m, v)

    def rhs(self, etas: np.ndarray, w_hats: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Derivatives of every follower's (eta, w_hat) at once"""
        eps = self.local_errors(etas, v)
        eta_dot = skew_apply(w_hats, etas) - self.a_expanded * eps - skew_apply(w_hats, eps)
        eta_p = _pairs(etas)
        eps_p = _pairs(eps)
        w_dot = self.kappa * (eta_p[..., 0] * eps_p[..., 1] - eta_p[..., 1] * eps_p[..., 0])
        return eta_dot, w_dot
