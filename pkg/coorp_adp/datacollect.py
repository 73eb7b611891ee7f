"""
Data matrices for the off-policy least-squares solve.

For each basis element X_j the logged run is re-read as the shifted trajectory
x_bar(t) = x(t) - X_j w(t), where w is either the follower's exostate estimate
eta_i or the true leader state v. Over every sampling interval the module
integrates x_bar kron x_bar, x_bar kron u and x_bar kron w, and records the
change of vecv(x_bar).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .exceptions import AssumptionError, DimensionError, ReportError
from .linalg import as_matrix, symmetrize
from .plant import TrajectoryLog

logger = logging.getLogger(__name__)

EXO_SIGNALS = ('estimate', 'true')
RANK_REL_TOL = 1e-8


# ── Packing of symmetric matrices ─────────────────────────────────────────

def _triu(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangular index pairs"""
    return np.triu_indices(n)


def vecs(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """[p11, 2p12, ..., 2p1n, p22, 2p23, ..., pnn]"""
    P = as_matrix(P, "P")
    n = P.shape[0]
    if P.shape != (n, n):
        raise DimensionError(f"vecs needs a square matrix, got {P.shape}")
    if np.max(np.abs(P - P.T), initial=0.0) > tol * max(1.0, np.max(np.abs(P), initial=0.0)):
        raise ValueError("vecs needs a symmetric matrix")
    P = symmetrize(P)
    rows, cols = _triu(n)
    weights = np.where(rows == cols, 1.0, 2.0)
    return weights * P[rows, cols]


def unvecs(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of vecs"""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n * (n + 1) // 2:
        raise DimensionError(f"Expected {n * (n + 1) // 2} entries for n={n}, got {v.size}")
    rows, cols = _triu(n)
    P = np.zeros((n, n))
    P[rows, cols] = np.where(rows == cols, v, 0.5 * v)
    return P + np.triu(P, 1).T


def vecv(a: np.ndarray) -> np.ndarray:
    """
    [a1^2, a1 a2, ..., a1 an, a2^2, ..., an^2], so that vecv(a) . vecs(P) = a^T P a.
    """
    a = np.asarray(a, dtype=float).ravel()
    rows, cols = _triu(a.size)
    return a[rows] * a[cols]


def vecv_rows(samples: np.ndarray) -> np.ndarray:
    """vecv applied to every row of an S x n array"""
    rows, cols = _triu(samples.shape[1])
    return samples[:, rows] * samples[:, cols]


def _row_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product of S x na and S x nb arrays"""
    return np.einsum('si,sj->sij', a, b).reshape(a.shape[0], -1)


# ── Regulator basis ───────────────────────────────────────────────────────

@dataclass
class BasisFamily:
    """
    X[0] = 0, X[1] solves C X + F = 0, X[2..h+1] span ker(I_q kron C)
    with orthonormal vectorizations.
    """
    X: List[np.ndarray]

    @property
    def h(self) -> int:
        return len(self.X) - 2

    @property
    def particular(self) -> np.ndarray:
        return self.X[1]

    @property
    def kernel(self) -> List[np.ndarray]:
        return self.X[2:]

    def __len__(self) -> int:
        return len(self.X)


def null_basis(C: np.ndarray, F: np.ndarray) -> BasisFamily:
    """
    Minimum-norm particular solution and an orthonormal kernel basis.

    Raises:
        AssumptionError: If C does not have full row rank
    """
    C = as_matrix(C, "C")
    F = as_matrix(F, "F")
    p, n = C.shape
    if F.shape[0] != p:
        raise DimensionError(f"F has {F.shape[0]} rows, C has {p}")
    q = F.shape[1]
    if np.linalg.matrix_rank(C) < p:
        raise AssumptionError(f"Output matrix C ({p}x{n}) is not full row rank")

    X1 = -np.linalg.pinv(C) @ F
    kernel = scipy.linalg.null_space(np.kron(np.eye(q), C))
    basis = [np.zeros((n, q)), X1]
    basis += [kernel[:, j].reshape((n, q), order='F') for j in range(kernel.shape[1])]
    logger.debug(f"Regulator basis: n={n}, p={p}, q={q}, h={kernel.shape[1]}")
    return BasisFamily(basis)


# ── Data matrices ─────────────────────────────────────────────────────────

@dataclass
class DataMatrices:
    """Quadrature rows for one basis index j; one row per sampling interval"""
    instants: np.ndarray
    d_xx: np.ndarray
    G_xx: np.ndarray
    G_xu: np.ndarray
    G_xv: np.ndarray
    j: int = 0

    def __post_init__(self):
        s = self.instants.size - 1
        for name in ('d_xx', 'G_xx', 'G_xu', 'G_xv'):
            if getattr(self, name).shape[0] != s:
                raise DimensionError(f"{name} has {getattr(self, name).shape[0]} rows, expected {s}")
        n = int(round(np.sqrt(self.G_xx.shape[1])))
        if n * n != self.G_xx.shape[1] or self.d_xx.shape[1] != n * (n + 1) // 2:
            raise DimensionError("d_xx and G_xx widths disagree on the state dimension")

    @property
    def rows(self) -> int:
        return self.instants.size - 1

    @property
    def n(self) -> int:
        return int(round(np.sqrt(self.G_xx.shape[1])))

    @property
    def m(self) -> int:
        return self.G_xu.shape[1] // self.n

    @property
    def q(self) -> int:
        return self.G_xv.shape[1] // self.n

    @property
    def required_rank(self) -> int:
        n = self.n
        return n * (n + 1) // 2 + (self.m + self.q) * n


@dataclass(frozen=True)
class RankCheck:
    ok: bool
    rank: int
    required: int
    singular_values: Tuple[float, ...] = field(default=(), compare=False)


def sampling_instants(t0: float, t_end: float, interval: float) -> np.ndarray:
    """t0, t0 + interval, ..., t_end; the interval must divide the window"""
    if interval <= 0 or t_end <= t0:
        raise ValueError(f"Need interval > 0 and t_end > t0, got {interval}, [{t0}, {t_end}]")
    count = int(round((t_end - t0) / interval))
    if abs(count * interval - (t_end - t0)) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"Interval {interval} does not divide the window [{t0}, {t_end}]")
    return t0 + interval * np.arange(count + 1)


def _instant_indices(log: TrajectoryLog, instants: Sequence[float]) -> np.ndarray:
    instants = np.asarray(instants, dtype=float)
    if instants.size < 2:
        raise ValueError("Need at least two sampling instants")
    if np.any(np.diff(instants) <= 0):
        raise ValueError("Sampling instants must be strictly increasing")
    return np.array([log.index_of(t) for t in instants])


def exo_trajectory(log: TrajectoryLog, agent: int, exo_signal: str = 'estimate') -> np.ndarray:
    """The exostate signal agent (1-based) uses: its estimate eta_i or the true v"""
    if exo_signal not in EXO_SIGNALS:
        raise ValueError(f"exo_signal must be one of {EXO_SIGNALS}, got {exo_signal!r}")
    if exo_signal == 'true':
        return log.v
    return log.eta[:, agent - 1, :]


def accumulate(
    log: TrajectoryLog,
    agent: int,
    X: np.ndarray,
    instants: Sequence[float],
    exo_signal: str = 'estimate',
    j: int = 0,
) -> DataMatrices:
    """
    Quadrature rows for x_bar = x - X w over consecutive sampling intervals.

    Every product is integrated with the trapezoid rule on the log grid; the
    simulator applies the controller continuously, so the grid samples of u are
    the input itself.

    Args:
        log: Logged run containing the agent
        agent: 1-based follower index
        X: n x q basis element
        instants: Grid-aligned, strictly increasing sampling instants
        exo_signal: 'estimate' (eta_i) or 'true' (v)
        j: Basis index recorded on the result

    Raises:
        ValueError: Off-grid or non-increasing instants, unknown exo_signal
    """
    idx = _instant_indices(log, instants)
    x = log.x[agent - 1]
    u = log.u[agent - 1]
    w = exo_trajectory(log, agent, exo_signal)
    X = as_matrix(X, "X")
    if X.shape != (x.shape[1], w.shape[1]):
        raise DimensionError(f"X must be {x.shape[1]}x{w.shape[1]}, got {X.shape}")

    lo, hi = idx[0], idx[-1]
    xb = x[lo:hi + 1] - w[lo:hi + 1] @ X.T
    dt = log.dt

    def trapezoid_steps(values: np.ndarray) -> np.ndarray:
        return 0.5 * dt * (values[:-1] + values[1:])

    step_xx = trapezoid_steps(_row_kron(xb, xb))
    step_xu = trapezoid_steps(_row_kron(xb, u[lo:hi + 1]))
    step_xw = trapezoid_steps(_row_kron(xb, w[lo:hi + 1]))

    starts = idx[:-1] - lo
    vv = vecv_rows(xb[idx - lo])
    return DataMatrices(
        instants=log.t[idx].copy(),
        d_xx=vv[1:] - vv[:-1],
        G_xx=np.add.reduceat(step_xx, starts, axis=0),
        G_xu=np.add.reduceat(step_xu, starts, axis=0),
        G_xv=np.add.reduceat(step_xw, starts, axis=0),
        j=j,
    )


def build_data_family(
    log: TrajectoryLog,
    agent: int,
    basis: BasisFamily,
    instants: Sequence[float],
    exo_signal: str = 'estimate',
) -> List[DataMatrices]:
    """accumulate for every basis element, reusing the same logged run"""
    family = [accumulate(log, agent, X, instants, exo_signal, j=j) for j, X in enumerate(basis.X)]
    logger.debug(f"Agent {agent}: {len(family)} data sets with {family[0].rows} rows each")
    return family


def rank_condition(data: DataMatrices, rel_tol: float = RANK_REL_TOL) -> RankCheck:
    """Numerical rank of [G_xx, G_xu, G_xv] against n(n+1)/2 + (m+q)n"""
    stacked = np.hstack([data.G_xx, data.G_xu, data.G_xv])
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > rel_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    required = data.required_rank
    return RankCheck(rank >= required, rank, required, tuple(float(s) for s in sv))


# ── Off-policy replay dumps ───────────────────────────────────────────────

_FIELDS = ('d_xx', 'G_xx', 'G_xu', 'G_xv')


def save_data(
    path: Union[str, Path],
    family: Sequence[DataMatrices],
    basis: Optional[BasisFamily] = None,
) -> Path:
    """Write a data family (and optionally its basis) to a compressed .npz"""
    path = Path(path)
    arrays = {'instants': family[0].instants, 'count': np.array(len(family))}
    for data in family:
        for name in _FIELDS:
            arrays[f'{name}_{data.j}'] = getattr(data, name)
    if basis is not None:
        arrays['basis'] = np.stack(basis.X)
    try:
        np.savez_compressed(path, **arrays)
    except OSError as e:
        raise ReportError(f"Could not write data dump {path}: {e}") from e
    return path if path.suffix == '.npz' else path.with_name(path.name + '.npz')


def data_dump_path(directory: Union[str, Path], agent: int) -> Path:
    return Path(directory) / f"agent_{agent}.npz"


def load_data(path: Union[str, Path]) -> Tuple[List[DataMatrices], Optional[BasisFamily]]:
    try:
        with np.load(path) as dump:
            instants = dump['instants']
            family = [
                DataMatrices(instants, *(dump[f'{name}_{j}'] for name in _FIELDS), j=j)
                for j in range(int(dump['count']))
            ]
            basis = BasisFamily(list(dump['basis'])) if 'basis' in dump.files else None
    except (OSError, KeyError, ValueError) as e:
        raise ReportError(f"Could not read data dump {path}: {e}") from e
    return family, basis
