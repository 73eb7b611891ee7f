"""
Leader exosystem and follower plants on a fixed-step RK4 grid.

This module provides:
- ExosystemModel / AgentModel: the harmonic leader and one LTI follower
- step_exosystem, step_follower, tracking_error: single-step primitives
- NoiseSpec / exploration_noise: deterministic sum-of-sinusoids excitation
- WorldSimulator: co-integrates leader, followers and observers and logs
  everything into a TrajectoryLog
"""

import logging
import re
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import place_poles

from .exceptions import AssumptionError, DimensionError, DivergenceError
from .linalg import as_matrix, spectral_abscissa
from .logger import setup_logger
from .observer import ObserverNetwork, assemble_Ehat

DEFAULT_DT = 1e-3
DIVERGENCE_LIMIT = 1e8

Controller = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


# ── Models ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ExosystemModel:
    """v_dot = E v with E = bdiag([[0, w_r], [-w_r, 0]])"""
    frequencies: Tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in np.ravel(self.frequencies))
        if not w:
            raise DimensionError("Exosystem needs at least one frequency")
        if any(x <= 0 for x in w):
            raise ValueError(f"Frequencies must be positive, got {w}")
        if len(set(w)) != len(w):
            raise ValueError(f"Frequencies must be pairwise distinct, got {w}")
        object.__setattr__(self, 'frequencies', w)

    @property
    def q(self) -> int:
        return 2 * len(self.frequencies)

    @property
    def E(self) -> np.ndarray:
        return assemble_Ehat(self.frequencies)


@dataclass(frozen=True)
class AgentModel:
    """
    One follower: x_dot = A x + B u + D v, e = C x + F v.

    ``index`` is the 1-based follower number.
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    index: int = 1

    def __post_init__(self):
        for name in ('A', 'B', 'C', 'D', 'F'):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"Agent {self.index}: A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError(f"Agent {self.index}: B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise DimensionError(f"Agent {self.index}: C has {self.C.shape[1]} columns, expected {n}")
        if self.D.shape[0] != n:
            raise DimensionError(f"Agent {self.index}: D has {self.D.shape[0]} rows, expected {n}")
        if self.F.shape != (self.C.shape[0], self.D.shape[1]):
            raise DimensionError(
                f"Agent {self.index}: F must be {self.C.shape[0]}x{self.D.shape[1]}, got {self.F.shape}"
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return self.D.shape[1]

    def to_dict(self) -> dict:
        return {
            'index': self.index,
            'A': self.A.tolist(), 'B': self.B.tolist(), 'C': self.C.tolist(),
            'D': self.D.tolist(), 'F': self.F.tolist(),
        }


def paper_agent(i: int) -> AgentModel:
    """The i-parameterized third-order follower family of the worked example"""
    return AgentModel(
        A=[[1.0, 1.0 + i, 0.0], [0.0, 2.0, -0.5 * i], [1.0, 0.0, 1.0 + i]],
        B=[[0.0], [1.0], [float(i)]],
        C=[[1.0 / i, 0.0, 0.0]],
        D=[[1.0, 0.0, -1.0, 0.0], [0.0, 0.0, 1.5 * i, 0.0], [0.0, 1.0, 0.0, -0.5 * i]],
        F=[[-0.75 * i, 0.0, 1.0, 0.0]],
        index=i,
    )


# ── Structural checks ──────────────────────────────────────────────────────

@dataclass
class AssumptionReport:
    agent: int
    stabilizable: bool
    observable: bool
    transmission_ok: bool
    failing_eigenvalues: List[complex] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.stabilizable and self.observable and self.transmission_ok

    def to_dict(self) -> dict:
        return {
            'agent': self.agent,
            'stabilizable': self.stabilizable,
            'observable': self.observable,
            'transmission_ok': self.transmission_ok,
            'failing_eigenvalues': [[z.real, z.imag] for z in self.failing_eigenvalues],
        }


def check_assumptions(model: AgentModel, E: np.ndarray) -> AssumptionReport:
    """
    Stabilizability (PBH test at eigenvalues with Re >= 0), observability
    (rank of the observability matrix) and the transmission-zero condition
    rank [[A - lambda I, B], [C, 0]] = n + p at every eigenvalue of E.
    """
    A, B, C = model.A, model.B, model.C
    n, p = model.n, model.p

    stabilizable = True
    for lam in np.linalg.eigvals(A):
        if lam.real >= 0:
            pbh = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(pbh) < n:
                stabilizable = False

    obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    observable = bool(np.linalg.matrix_rank(obs) == n)

    failing = []
    for lam in np.linalg.eigvals(E):
        top = np.hstack([A - lam * np.eye(n), B])
        bottom = np.hstack([C, np.zeros((p, model.m))])
        if np.linalg.matrix_rank(np.vstack([top, bottom])) < n + p:
            failing.append(complex(lam))

    return AssumptionReport(model.index, stabilizable, observable, not failing, failing)


def require_assumptions(model: AgentModel, E: np.ndarray) -> AssumptionReport:
    """check_assumptions, raising AssumptionError on any failure"""
    report = check_assumptions(model, E)
    if not report.ok:
        problems = []
        if not report.stabilizable:
            problems.append("(A, B) not stabilizable")
        if not report.observable:
            problems.append("(C, A) not observable")
        if not report.transmission_ok:
            problems.append(f"transmission-zero condition fails at {report.failing_eigenvalues}")
        raise AssumptionError(f"Agent {model.index}: " + "; ".join(problems))
    return report


def pole_placement_gain(model: AgentModel, poles: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Model-based stabilizing gain K with eig(A - B K) = poles.

    Uses the true (A, B) and therefore belongs to the harness, never to the
    learner. Default poles are -1, -2, ..., -n.
    """
    if poles is None:
        poles = -np.arange(1.0, model.n + 1.0)
    result = place_poles(model.A, model.B, np.asarray(poles, dtype=float))
    K = result.gain_matrix
    if spectral_abscissa(model.A - model.B @ K) >= 0:
        raise AssumptionError(f"Agent {model.index}: pole placement did not stabilize the plant")
    return K


# ── Single-step primitives ────────────────────────────────────────────────

def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of an autonomous right-hand side"""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_exosystem(v: np.ndarray, E: np.ndarray, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return rk4_step(lambda y: E @ y, np.asarray(v, dtype=float), dt)


def step_follower(
    x: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    model: AgentModel,
    dt: float,
) -> np.ndarray:
    """RK4 step of x_dot = A x + B u + D v with u and v held over the step"""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.asarray(v, dtype=float)
    if x.shape != (model.n,) or u.shape != (model.m,) or v.shape != (model.q,):
        raise DimensionError(
            f"Agent {model.index}: expected x({model.n}), u({model.m}), v({model.q}); "
            f"got {x.shape}, {u.shape}, {v.shape}"
        )
    forcing = model.B @ u + model.D @ v
    return rk4_step(lambda y: model.A @ y + forcing, x, dt)


def tracking_error(x: np.ndarray, v: np.ndarray, model: AgentModel) -> np.ndarray:
    """e = C x + F v"""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (model.n,) or v.shape != (model.q,):
        raise DimensionError(
            f"Agent {model.index}: expected x({model.n}), v({model.q}); got {x.shape}, {v.shape}"
        )
    return model.C @ x + model.F @ v


# ── Exploration noise ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class NoiseSpec:
    """Sum of sinusoids per input channel; arrays are m x K"""
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        for name in ('amplitudes', 'frequencies', 'phases'):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.amplitudes.shape == self.frequencies.shape == self.phases.shape):
            raise DimensionError("Noise amplitudes, frequencies and phases must share one shape")

    @classmethod
    def sinusoids(
        cls,
        num_inputs: int,
        num_terms: int = 100,
        amplitude: float = 0.1,
        freq_min: float = 0.1,
        freq_max: float = 50.0,
        seed: int = 0,
    ) -> "NoiseSpec":
        """Log-spaced frequencies in [freq_min, freq_max] with seeded random phases"""
        rng = np.random.default_rng(seed)
        base = np.geomspace(freq_min, freq_max, num_terms)
        freqs = np.vstack([rng.permutation(base) for _ in range(num_inputs)])
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(num_inputs, num_terms))
        amps = np.full((num_inputs, num_terms), float(amplitude))
        return cls(amps, freqs, phases)

    @classmethod
    def zero(cls, num_inputs: int) -> "NoiseSpec":
        return cls(np.zeros((num_inputs, 1)), np.ones((num_inputs, 1)), np.zeros((num_inputs, 1)))

    @property
    def num_inputs(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def bound(self) -> np.ndarray:
        """Per-channel bound sum_k |a_k|"""
        return np.abs(self.amplitudes).sum(axis=1)


def exploration_noise(t: float, spec: NoiseSpec) -> np.ndarray:
    """zeta(t) = sum_k a_k sin(w_k t + phi_k), one entry per input"""
    return (spec.amplitudes * np.sin(spec.frequencies * t + spec.phases)).sum(axis=1)


# ── Trajectory log ────────────────────────────────────────────────────────

_AGENT_COLUMN = re.compile(r'^(x|u|eta|e|what)_(\d+)_(\d+)$')
_EPS_COLUMN = re.compile(r'^eps_(\d+)$')


@dataclass
class TrajectoryLog:
    """
    Samples on the uniform grid t_0..t_end.

    Per-agent lists hold S x dim arrays; ``u[i][k]`` is the input applied at
    t_k. eta is S x N x q and w_hat is S x N x q/2.
    """
    t: np.ndarray
    v: np.ndarray
    x: List[np.ndarray]
    u: List[np.ndarray]
    eta: np.ndarray
    w_hat: np.ndarray
    e: List[np.ndarray]
    eps_norm: np.ndarray

    def __post_init__(self):
        S = self.t.size
        if S >= 3:
            steps = np.diff(self.t)
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(self.t[-1])):
                raise DimensionError("Trajectory log time grid is not uniform")
        arrays = [self.v, self.eta, self.w_hat, self.eps_norm] + self.x + self.u + self.e
        for arr in arrays:
            if arr.shape[0] != S:
                raise DimensionError(f"Logged array has {arr.shape[0]} samples, grid has {S}")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def num_agents(self) -> int:
        return len(self.x)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of time t; raises ValueError if t is off-grid"""
        k = int(round((t - self.t[0]) / self.dt))
        if k < 0 or k >= self.t.size or abs(self.t[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"Time {t} is not on the log grid")
        return k

    def final_state(self) -> "WorldState":
        return WorldState(
            t=float(self.t[-1]),
            v=self.v[-1].copy(),
            x=[xi[-1].copy() for xi in self.x],
            eta=self.eta[-1].copy(),
            w_hat=self.w_hat[-1].copy(),
        )

    def to_frame(self) -> pd.DataFrame:
        """One row per grid point, columns t, v1.., then x_i_*, u_i_*, eta_i_*, e_i_*, what_i_*, eps_i"""
        columns: Dict[str, np.ndarray] = {'t': self.t}
        for r in range(self.v.shape[1]):
            columns[f'v{r + 1}'] = self.v[:, r]
        for i in range(self.num_agents):
            tag = i + 1
            for name, arr in (('x', self.x[i]), ('u', self.u[i]), ('eta', self.eta[:, i, :]),
                              ('e', self.e[i]), ('what', self.w_hat[:, i, :])):
                for c in range(arr.shape[1]):
                    columns[f'{name}_{tag}_{c + 1}'] = arr[:, c]
            columns[f'eps_{tag}'] = self.eps_norm[:, i]
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TrajectoryLog":
        frame = pd.read_csv(path, float_precision='round_trip')
        t = frame['t'].to_numpy()
        v_cols = sorted((c for c in frame.columns if re.fullmatch(r'v\d+', c)), key=lambda c: int(c[1:]))
        groups: Dict[Tuple[str, int], List[Tuple[int, str]]] = {}
        eps_cols: Dict[int, str] = {}
        for col in frame.columns:
            match = _AGENT_COLUMN.match(col)
            if match:
                groups.setdefault((match.group(1), int(match.group(2))), []).append((int(match.group(3)), col))
                continue
            match = _EPS_COLUMN.match(col)
            if match:
                eps_cols[int(match.group(1))] = col
        agents = sorted(eps_cols)

        def block(name: str, agent: int) -> np.ndarray:
            cols = [c for _, c in sorted(groups.get((name, agent), []))]
            return frame[cols].to_numpy() if cols else np.zeros((t.size, 0))

        return cls(
            t=t,
            v=frame[v_cols].to_numpy(),
            x=[block('x', a) for a in agents],
            u=[block('u', a) for a in agents],
            eta=np.stack([block('eta', a) for a in agents], axis=1),
            w_hat=np.stack([block('what', a) for a in agents], axis=1),
            e=[block('e', a) for a in agents],
            eps_norm=np.column_stack([frame[eps_cols[a]].to_numpy() for a in agents]),
        )

    @classmethod
    def concatenate(cls, logs: Sequence["TrajectoryLog"]) -> "TrajectoryLog":
        """
        Join runs that continue one another through final_state.

        Each later log starts on the previous log's last sample, which is
        kept only once.

        Raises:
            ValueError: No logs, or a log does not start where the previous one ended
        """
        if not logs:
            raise ValueError("Nothing to concatenate")
        for prev, nxt in zip(logs[:-1], logs[1:]):
            if abs(nxt.t[0] - prev.t[-1]) > 1e-9 * max(1.0, abs(prev.t[-1])):
                raise ValueError(f"Log starting at t={nxt.t[0]} does not continue one ending at t={prev.t[-1]}")
        parts = [logs[0]] + [log.slice(1, log.t.size) for log in logs[1:]]
        return cls(
            t=np.concatenate([p.t for p in parts]),
            v=np.concatenate([p.v for p in parts]),
            x=[np.concatenate([p.x[i] for p in parts]) for i in range(logs[0].num_agents)],
            u=[np.concatenate([p.u[i] for p in parts]) for i in range(logs[0].num_agents)],
            eta=np.concatenate([p.eta for p in parts]),
            w_hat=np.concatenate([p.w_hat for p in parts]),
            e=[np.concatenate([p.e[i] for p in parts]) for i in range(logs[0].num_agents)],
            eps_norm=np.concatenate([p.eps_norm for p in parts]),
        )

    def slice(self, start: int, stop: int, stride: int = 1) -> "TrajectoryLog":
        """Samples start, start + stride, ... below stop; the grid stays uniform"""
        sl = np.s_[start:stop:stride]
        return TrajectoryLog(
            t=self.t[sl],
            v=self.v[sl],
            x=[xi[sl] for xi in self.x],
            u=[ui[sl] for ui in self.u],
            eta=self.eta[sl],
            w_hat=self.w_hat[sl],
            e=[ei[sl] for ei in self.e],
            eps_norm=self.eps_norm[sl],
        )


# ── World simulation ──────────────────────────────────────────────────────

@dataclass
class WorldState:
    t: float
    v: np.ndarray
    x: List[np.ndarray]
    eta: np.ndarray
    w_hat: np.ndarray


class WorldSimulator:
    """
    Co-integrates the exosystem, every follower and (optionally) the observer
    network with one RK4 stepper.

    Controllers are evaluated at every RK4 stage from the staged states and
    estimates, so the closed loop is integrated as a single ODE; the log keeps
    the grid-point inputs. Without an observer network every follower reads the
    true leader state.
    """

    def __init__(
        self,
        exosystem: ExosystemModel,
        agents: Sequence[AgentModel],
        network: Optional[ObserverNetwork] = None,
        log_level: int = logging.INFO,
        divergence_limit: float = DIVERGENCE_LIMIT,
    ):
        self.logger = setup_logger(__name__, log_level)
        self.exosystem = exosystem
        self.agents = list(agents)
        self.network = network
        self.divergence_limit = divergence_limit
        self.E = exosystem.E

        q = exosystem.q
        for agent in self.agents:
            if agent.q != q:
                raise DimensionError(f"Agent {agent.index} expects q={agent.q}, exosystem has q={q}")
        if network is not None and network.num_followers != len(self.agents):
            raise DimensionError(
                f"Observer network has {network.num_followers} followers, world has {len(self.agents)}"
            )

        # Offsets of each block inside the packed state vector
        self._slices: List[slice] = []
        offset = q
        for agent in self.agents:
            self._slices.append(slice(offset, offset + agent.n))
            offset += agent.n
        N = len(self.agents)
        self._eta_slice = slice(offset, offset + N * q)
        offset += N * q
        self._what_slice = slice(offset, offset + N * (q // 2))
        self._size = offset + N * (q // 2)

    @property
    def q(self) -> int:
        return self.exosystem.q

    def initial_state(
        self,
        v0: Sequence[float],
        x0: Optional[Sequence[Sequence[float]]] = None,
        eta0: Optional[np.ndarray] = None,
        w_hat0: Optional[np.ndarray] = None,
        t0: float = 0.0,
    ) -> WorldState:
        """Zero follower states and zero observer estimates unless given"""
        N, q = len(self.agents), self.q
        v0 = np.asarray(v0, dtype=float)
        if v0.shape != (q,):
            raise DimensionError(f"v0 must have {q} entries, got {v0.shape}")
        x = [np.zeros(a.n) for a in self.agents] if x0 is None else [np.asarray(xi, dtype=float) for xi in x0]
        for agent, xi in zip(self.agents, x):
            if xi.shape != (agent.n,):
                raise DimensionError(f"Agent {agent.index}: x0 must have {agent.n} entries")
        eta = np.zeros((N, q)) if eta0 is None else np.array(eta0, dtype=float).reshape(N, q)
        w_hat = np.zeros((N, q // 2)) if w_hat0 is None else np.array(w_hat0, dtype=float).reshape(N, q // 2)
        if self.network is None:
            eta = np.tile(v0, (N, 1))
            w_hat = np.tile(self.exosystem.frequencies, (N, 1))
        return WorldState(t=t0, v=v0, x=x, eta=eta, w_hat=w_hat)

    def _pack(self, state: WorldState) -> np.ndarray:
        y = np.empty(self._size)
        y[:self.q] = state.v
        for sl, xi in zip(self._slices, state.x):
            y[sl] = xi
        y[self._eta_slice] = state.eta.ravel()
        y[self._what_slice] = state.w_hat.ravel()
        return y

    def _rhs(self, y: np.ndarray, inputs: List[np.ndarray]) -> np.ndarray:
        dy = np.zeros_like(y)
        v = y[:self.q]
        dy[:self.q] = self.E @ v
        for sl, agent, u in zip(self._slices, self.agents, inputs):
            dy[sl] = agent.A @ y[sl] + agent.B @ u + agent.D @ v
        if self.network is not None:
            N = len(self.agents)
            etas = y[self._eta_slice].reshape(N, self.q)
            w_hats = y[self._what_slice].reshape(N, self.q // 2)
            eta_dot, w_dot = self.network.rhs(etas, w_hats, v)
            dy[self._eta_slice] = eta_dot.ravel()
            dy[self._what_slice] = w_dot.ravel()
        return dy

    def _etas(self, y: np.ndarray) -> np.ndarray:
        if self.network is None:
            return np.tile(y[:self.q], (len(self.agents), 1))
        return y[self._eta_slice].reshape(len(self.agents), self.q)

    def _check_finite(self, y: np.ndarray, t: float) -> None:
        if np.all(np.isfinite(y)) and np.max(np.abs(y)) <= self.divergence_limit:
            return
        for agent, sl in zip(self.agents, self._slices):
            block = y[sl]
            if not np.all(np.isfinite(block)) or np.linalg.norm(block) > self.divergence_limit:
                raise DivergenceError(f"Agent {agent.index} state diverged at t={t:.6g}", time=t, agent=agent.index)
        raise DivergenceError(f"Exosystem or observer state diverged at t={t:.6g}", time=t, agent=None)

    def _inputs(self, controllers: Sequence[Controller], t: float, y: np.ndarray) -> List[np.ndarray]:
        etas = self._etas(y)
        inputs = []
        for i, (agent, ctrl) in enumerate(zip(self.agents, controllers)):
            u = np.atleast_1d(np.asarray(ctrl(t, y[self._slices[i]], etas[i]), dtype=float))
            if u.shape != (agent.m,):
                raise DimensionError(f"Controller for agent {agent.index} returned shape {u.shape}")
            inputs.append(u)
        return inputs

    def _step(
        self,
        controllers: Sequence[Controller],
        t: float,
        y: np.ndarray,
        dt: float,
        inputs: List[np.ndarray],
    ) -> np.ndarray:
        """RK4 step with the controllers re-evaluated at each stage"""
        def f(t_s: float, z: np.ndarray) -> np.ndarray:
            return self._rhs(z, self._inputs(controllers, t_s, z))

        k1 = self._rhs(y, inputs)
        k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = f(t + dt, y + dt * k3)
        return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def simulate(
        self,
        controllers: Sequence[Controller],
        duration: float,
        dt: float,
        state: WorldState,
    ) -> TrajectoryLog:
        """
        Integrate from ``state`` for ``duration`` seconds.

        Args:
            controllers: One callable (t, x_i, eta_i) -> u_i per follower
            duration: Horizon; must be an integer multiple of dt
            dt: Fixed step
            state: Initial world state (e.g. from initial_state or a log's final_state)

        Raises:
            DimensionError: Wrong controller count or output size
            ValueError: dt does not divide duration
            DivergenceError: A state became non-finite or exceeded the norm guard
        """
        if dt <= 0 or duration < 0:
            raise ValueError(f"Need dt > 0 and duration >= 0, got dt={dt}, duration={duration}")
        steps = int(round(duration / dt))
        if abs(steps * dt - duration) > 1e-9 * max(1.0, duration):
            raise ValueError(f"dt={dt} does not divide duration={duration}")
        if len(controllers) != len(self.agents):
            raise DimensionError(f"Need {len(self.agents)} controllers, got {len(controllers)}")

        N, q = len(self.agents), self.q
        S = steps + 1
        t_grid = state.t + dt * np.arange(S)
        v_log = np.empty((S, q))
        x_log = [np.empty((S, a.n)) for a in self.agents]
        u_log = [np.empty((S, a.m)) for a in self.agents]
        eta_log = np.empty((S, N, q))
        what_log = np.empty((S, N, q // 2))

        self.logger.debug(f"Simulating {duration:g}s ({steps} steps of {dt:g}s) from t={state.t:g}")
        started = _time.perf_counter()
        y = self._pack(state)

        for k in range(S):
            t = float(t_grid[k])
            inputs = self._inputs(controllers, t, y)
            for i in range(N):
                x_log[i][k] = y[self._slices[i]]
                u_log[i][k] = inputs[i]
            v_log[k] = y[:q]
            eta_log[k] = self._etas(y)
            what_log[k] = (y[self._what_slice].reshape(N, q // 2) if self.network is not None
                           else np.tile(self.exosystem.frequencies, (N, 1)))
            if k == steps:
                break
            y = self._step(controllers, t, y, dt, inputs)
            self._check_finite(y, float(t_grid[k + 1]))

        e_log = [x_log[i] @ a.C.T + v_log @ a.F.T for i, a in enumerate(self.agents)]
        if self.network is not None:
            eps = np.einsum('ij,sjk->sik', self.network.H, eta_log) - self.network.m[None, :, None] * v_log[:, None, :]
            eps_norm = np.linalg.norm(eps, axis=2)
        else:
            eps_norm = np.zeros((S, N))

        self.logger.debug(f"Simulation finished in {_time.perf_counter() - started:.2f}s")
        return TrajectoryLog(t_grid, v_log, x_log, u_log, eta_log, what_log, e_log, eps_norm)
