"""
Shared fixtures.

The synthetic runs integrate a single follower against the true leader state
on a fine grid, so the quadrature identities hold to near machine precision
and learned quantities can be compared with the model-based oracle. The exact
run goes further and integrates the data products as extra ODE states with a
tight-tolerance solver, leaving no quadrature error at all.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from coorp_adp.config import paper_config
from coorp_adp.datacollect import (
    BasisFamily,
    DataMatrices,
    build_data_family,
    null_basis,
    sampling_instants,
    vecv_rows,
)
from coorp_adp.learner import LinearController
from coorp_adp.oracle import OracleSolution, optimal_policy
from coorp_adp.plant import (
    AgentModel,
    ExosystemModel,
    NoiseSpec,
    TrajectoryLog,
    WorldSimulator,
    paper_agent,
    pole_placement_gain,
)

PAPER_FREQUENCIES = (1.0, 0.75)
PAPER_V0 = [0.0, 1.0, 0.0, 0.5]
SYNTHETIC_X0 = [0.5, -0.3, 0.2]
# 0.1-10 rad/s keeps every product well inside the rank tolerance over 8 s
SYNTHETIC_NOISE = NoiseSpec.sinusoids(1, num_terms=100, amplitude=1.0, freq_min=0.1, freq_max=10.0, seed=3)


@dataclass
class SyntheticRun:
    model: AgentModel
    E: np.ndarray
    K0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    log: Optional[TrajectoryLog]
    basis: BasisFamily
    family: List[DataMatrices]
    oracle: OracleSolution


def _synthetic_run(model, exo, v0, x0, K0, Q, R, noise, window, interval, dt) -> SyntheticRun:
    sim = WorldSimulator(exo, [model], network=None)
    state = sim.initial_state(v0, [x0])
    log = sim.simulate([LinearController(K0, noise=noise)], window, dt, state)
    basis = null_basis(model.C, model.F)
    instants = sampling_instants(0.0, window, interval)
    family = build_data_family(log, 1, basis, instants, exo_signal='true')
    oracle = optimal_policy(model, exo.E, Q, R, K0=K0)
    return SyntheticRun(model, exo.E, K0, Q, R, log, basis, family, oracle)


def _exact_family(
    model: AgentModel,
    exo: ExosystemModel,
    v0: Sequence[float],
    x0: Sequence[float],
    controller: LinearController,
    basis: BasisFamily,
    instants: np.ndarray,
) -> List[DataMatrices]:
    """
    Data rows from integrals carried as ODE states.

    With z = [x; v] the solver integrates z kron z and z kron u over each
    sampling interval, restarting the integrals at zero; every basis element
    then maps them through T = [I, -X_j], since
    (T kron T)(z kron z) = x_bar kron x_bar.
    """
    n, m, q = model.n, model.m, model.q
    nz = n + q

    def rhs(t, y):
        v, x = y[:q], y[q:q + n]
        u = controller(t, x, v)
        z = np.concatenate([x, v])
        return np.concatenate([exo.E @ v, model.A @ x + model.B @ u + model.D @ v, np.kron(z, z), np.kron(z, u)])

    states = [np.concatenate([v0, x0])]
    zz, zu = [], []
    for t0, t1 in zip(instants[:-1], instants[1:]):
        y0 = np.concatenate([states[-1], np.zeros(nz * nz + nz * m)])
        sol = solve_ivp(rhs, (t0, t1), y0, method='DOP853', rtol=1e-12, atol=1e-14)
        end = sol.y[:, -1]
        states.append(end[:q + n])
        zz.append(end[q + n:q + n + nz * nz])
        zu.append(end[q + n + nz * nz:])
    Y, zz, zu = np.array(states), np.array(zz), np.array(zu)
    v, x = Y[:, :q], Y[:, q:q + n]
    select_v = np.hstack([np.zeros((q, n)), np.eye(q)])
    family = []
    for j, X in enumerate(basis.X):
        T = np.hstack([np.eye(n), -X])
        vv = vecv_rows(x - v @ X.T)
        family.append(DataMatrices(
            instants=instants,
            d_xx=np.diff(vv, axis=0),
            G_xx=zz @ np.kron(T, T).T,
            G_xu=zu @ np.kron(T, np.eye(m)).T,
            G_xv=zz @ np.kron(T, select_v).T,
            j=j,
        ))
    return family


@pytest.fixture(scope="session")
def paper_exosystem():
    return ExosystemModel(PAPER_FREQUENCIES)


@pytest.fixture(scope="session")
def agent_one():
    return paper_agent(1)


@pytest.fixture(scope="session")
def synthetic_run(paper_exosystem, agent_one):
    """Follower 1 of the example, true exostate, dt = 1e-4, 8 s window"""
    K0 = pole_placement_gain(agent_one)
    return _synthetic_run(
        agent_one, paper_exosystem, PAPER_V0, SYNTHETIC_X0, K0,
        np.eye(3), np.eye(1), SYNTHETIC_NOISE, window=8.0, interval=0.05, dt=1e-4,
    )


@pytest.fixture(scope="session")
def exact_run(paper_exosystem, agent_one):
    """Follower 1 with the same excitation, rows from solver-exact integrals"""
    K0 = pole_placement_gain(agent_one)
    basis = null_basis(agent_one.C, agent_one.F)
    instants = sampling_instants(0.0, 8.0, 0.05)
    controller = LinearController(K0, noise=SYNTHETIC_NOISE)
    family = _exact_family(agent_one, paper_exosystem, PAPER_V0, SYNTHETIC_X0, controller, basis, instants)
    Q, R = np.eye(3), np.eye(1)
    oracle = optimal_policy(agent_one, paper_exosystem.E, Q, R, K0=K0)
    return SyntheticRun(agent_one, paper_exosystem.E, K0, Q, R, None, basis, family, oracle)


@pytest.fixture(scope="session")
def scalar_model():
    """x_dot = x + u tracking the first leader coordinate; no disturbance"""
    return AgentModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[-1.0, 0.0]], index=1)


@pytest.fixture(scope="session")
def scalar_run(scalar_model):
    exo = ExosystemModel((1.0,))
    noise = NoiseSpec.sinusoids(1, num_terms=20, amplitude=0.3, freq_min=0.2, freq_max=3.0, seed=11)
    return _synthetic_run(
        scalar_model, exo, [0.0, 1.0], [1.0], np.array([[2.0]]),
        np.eye(1), np.eye(1), noise, window=4.0, interval=0.05, dt=1e-4,
    )


@pytest.fixture
def config():
    return paper_config()


@pytest.fixture
def config_toml(tmp_path):
    """Path to a small valid TOML config with two followers"""
    path = tmp_path / "small.toml"
    path.write_text(
        'name = "small"\n'
        '[graph]\nnum_followers = 2\nedges = [[1, 2]]\ntargets = [1]\n'
        '[exosystem]\nfrequencies = [1.0, 0.75]\nv0 = [0.0, 1.0, 0.0, 0.5]\n'
        '[agents]\nfamily = "paper"\nindices = [1, 2]\n'
        '[observer]\na = [15.0, 15.0]\nkappa = [40.0, 40.0]\n'
        '[cost]\nQ = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\nR = [[1.0]]\n'
        '[learning]\nwindow = 4.0\ninterval = 0.05\n'
        '[simulation]\ndt = 0.001\nclosed_loop_duration = 5.0\n'
    )
    return path
