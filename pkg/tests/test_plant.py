"""
Unit tests for coorp_adp.plant

Covers the models, single-step integration, exploration noise, the world
simulator and the trajectory log export.
"""

import numpy as np
import pytest

from coorp_adp.exceptions import AssumptionError, DimensionError, DivergenceError
from coorp_adp.learner import LinearController
from coorp_adp.observer import ObserverGains, ObserverNetwork
from coorp_adp.oracle import optimal_policy
from coorp_adp.plant import (
    AgentModel,
    ExosystemModel,
    NoiseSpec,
    TrajectoryLog,
    WorldSimulator,
    check_assumptions,
    exploration_noise,
    paper_agent,
    pole_placement_gain,
    require_assumptions,
    rk4_step,
    step_exosystem,
    step_follower,
    tracking_error,
)
from coorp_adp.topology import CommGraph


def zero_controller(m=1):
    return lambda t, x, eta: np.zeros(m)


class TestModels:
    """Test model construction and validation"""

    def test_exosystem_matrix(self):
        """Block-diagonal skew matrix from the frequencies"""
        E = ExosystemModel((1.0, 0.75)).E
        expected = np.zeros((4, 4))
        expected[0, 1], expected[1, 0] = 1.0, -1.0
        expected[2, 3], expected[3, 2] = 0.75, -0.75
        np.testing.assert_array_equal(E, expected)

    def test_exosystem_rejects_repeated_frequency(self):
        """Frequencies must be distinct"""
        with pytest.raises(ValueError, match="distinct"):
            ExosystemModel((1.0, 1.0))

    def test_exosystem_rejects_nonpositive(self):
        """Frequencies must be positive"""
        with pytest.raises(ValueError, match="positive"):
            ExosystemModel((0.0,))

    def test_paper_agent_dimensions(self):
        """Three states, one input, one output, four exostates"""
        model = paper_agent(2)
        assert (model.n, model.m, model.p, model.q) == (3, 1, 1, 4)
        assert model.C[0, 0] == 0.5
        assert model.F[0, 0] == -1.5

    def test_agent_rejects_bad_shapes(self):
        """B must have n rows"""
        with pytest.raises(DimensionError, match="B has"):
            AgentModel(A=np.eye(2), B=[[1.0]], C=[[1.0, 0.0]], D=np.zeros((2, 2)), F=[[0.0, 0.0]])

    def test_to_dict(self):
        """Matrices serialize as nested lists"""
        data = paper_agent(1).to_dict()
        assert data['index'] == 1
        assert data['B'] == [[0.0], [1.0], [1.0]]


def test_rk4_exact_for_cubic():
    """y_dot = 3 t^2 written autonomously as y = [s, t] integrates s = t^3 exactly"""
    f = lambda y: np.array([3.0 * y[1] ** 2, 1.0])
    y = np.array([0.0, 0.0])
    for _ in range(10):
        y = rk4_step(f, y, 0.1)
    np.testing.assert_allclose(y, [1.0, 1.0], atol=1e-14)


class TestStepExosystem:
    """Test the leader RK4 step"""

    def test_zero_state_stays_zero(self):
        """v = 0 is an equilibrium"""
        E = ExosystemModel((1.0,)).E
        np.testing.assert_array_equal(step_exosystem(np.zeros(2), E, 1e-3), np.zeros(2))

    def test_quarter_period(self):
        """v(0) = [1, 0], w = 1: after pi/2 seconds v = [0, -1]"""
        E = ExosystemModel((1.0,)).E
        dt = (np.pi / 2) / 1571
        v = np.array([1.0, 0.0])
        for _ in range(1571):
            v = step_exosystem(v, E, dt)
        np.testing.assert_allclose(v, [0.0, -1.0], atol=1e-9)

    def test_norm_conservation(self):
        """Norm drift stays below 1e-6 over 8 s"""
        E = ExosystemModel((1.0, 0.75)).E
        v = np.array([0.0, 1.0, 0.0, 0.5])
        norm0 = np.linalg.norm(v)
        for _ in range(8000):
            v = step_exosystem(v, E, 1e-3)
        assert abs(np.linalg.norm(v) - norm0) < 1e-6

    def test_rejects_nonpositive_dt(self):
        """dt must be positive"""
        with pytest.raises(ValueError):
            step_exosystem(np.ones(2), np.zeros((2, 2)), 0.0)

    def test_step_halving(self):
        """One step of dt and two of dt/2 agree to 1e-10"""
        E = ExosystemModel((1.0, 0.75)).E
        v = np.array([0.0, 1.0, 0.0, 0.5])
        full = step_exosystem(v, E, 1e-3)
        half = step_exosystem(step_exosystem(v, E, 5e-4), E, 5e-4)
        np.testing.assert_allclose(full, half, atol=1e-10)


class TestStepFollower:
    """Test the follower RK4 step"""

    def test_zero_everything(self):
        """x = 0, u = 0, v = 0 stays at zero"""
        model = paper_agent(1)
        np.testing.assert_array_equal(step_follower(np.zeros(3), np.zeros(1), np.zeros(4), model, 1e-3), np.zeros(3))

    def test_scalar_exponential(self):
        """x_dot = -x from 1 over 1 s gives exp(-1)"""
        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]], F=[[0.0]])
        x = np.array([1.0])
        for _ in range(1000):
            x = step_follower(x, np.zeros(1), np.zeros(1), model, 1e-3)
        np.testing.assert_allclose(x, [np.exp(-1.0)], atol=1e-12)

    def test_step_halving_example_magnitudes(self):
        """One step versus two half steps on the example follower"""
        model = paper_agent(4)
        x, u, v = np.array([1.0, -2.0, 0.5]), np.array([3.0]), np.array([0.0, 1.0, 0.0, 0.5])
        full = step_follower(x, u, v, model, 1e-3)
        half = step_follower(step_follower(x, u, v, model, 5e-4), u, v, model, 5e-4)
        np.testing.assert_allclose(full, half, atol=1e-10)

    def test_rejects_wrong_input_size(self):
        """u must have m entries"""
        with pytest.raises(DimensionError):
            step_follower(np.zeros(3), np.zeros(2), np.zeros(4), paper_agent(1), 1e-3)


class TestTrackingError:
    """Test e = C x + F v"""

    def test_zero(self):
        """x = 0, v = 0 gives 0"""
        np.testing.assert_array_equal(tracking_error(np.zeros(3), np.zeros(4), paper_agent(1)), [0.0])

    def test_identity_readout(self):
        """C = I, F = 0 reads out x"""
        model = AgentModel(A=np.zeros((2, 2)), B=np.eye(2), C=np.eye(2), D=np.zeros((2, 2)), F=np.zeros((2, 2)))
        np.testing.assert_array_equal(tracking_error([1.0, 2.0], [5.0, 6.0], model), [1.0, 2.0])

    def test_agent_two_hand_value(self):
        """C = [1/2, 0, 0], F = [-1.5, 0, 1, 0], x = [2, 0, 0], v = [1, 0, 0, 0] gives -0.5"""
        e = tracking_error([2.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], paper_agent(2))
        np.testing.assert_allclose(e, [-0.5])


class TestExplorationNoise:
    """Test the sum-of-sinusoids excitation"""

    def test_zero_amplitude(self):
        """Zero amplitudes give zero for all t"""
        spec = NoiseSpec.sinusoids(2, num_terms=10, amplitude=0.0, seed=1)
        for t in np.linspace(0, 8, 17):
            np.testing.assert_array_equal(exploration_noise(t, spec), np.zeros(2))

    def test_single_sine_at_zero(self):
        """a sin(w t) vanishes at t = 0"""
        spec = NoiseSpec(amplitudes=[[0.7]], frequencies=[[3.0]], phases=[[0.0]])
        assert exploration_noise(0.0, spec)[0] == 0.0
        np.testing.assert_allclose(exploration_noise(0.5, spec), [0.7 * np.sin(1.5)])

    def test_bounded_on_grid(self):
        """100 terms of amplitude a_max stay within 100 a_max"""
        spec = NoiseSpec.sinusoids(1, num_terms=100, amplitude=0.1, seed=4)
        values = np.array([exploration_noise(t, spec) for t in np.arange(0.0, 8.0, 1e-3)])
        assert np.max(np.abs(values)) <= 100 * 0.1
        assert spec.bound[0] == pytest.approx(10.0)

    def test_deterministic_given_seed(self):
        """Same seed, same signal; different seed, different signal"""
        a = NoiseSpec.sinusoids(1, seed=5)
        b = NoiseSpec.sinusoids(1, seed=5)
        c = NoiseSpec.sinusoids(1, seed=6)
        assert exploration_noise(1.234, a)[0] == exploration_noise(1.234, b)[0]
        assert exploration_noise(1.234, a)[0] != exploration_noise(1.234, c)[0]

    def test_frequencies_log_spaced(self):
        """Frequencies cover [0.1, 50] on a log grid"""
        spec = NoiseSpec.sinusoids(1, num_terms=5, seed=0)
        np.testing.assert_allclose(np.sort(spec.frequencies[0]), np.geomspace(0.1, 50.0, 5))


class TestAssumptions:
    """Test the structural checks on follower models"""

    @pytest.mark.parametrize("i", [1, 2, 3, 4])
    def test_paper_agents_pass(self, i):
        """Every example follower satisfies all three checks"""
        report = check_assumptions(paper_agent(i), ExosystemModel((1.0, 0.75)).E)
        assert report.ok

    def test_unstabilizable(self):
        """Unstable mode the input cannot reach"""
        model = AgentModel(A=np.diag([1.0, -1.0]), B=[[0.0], [1.0]], C=[[1.0, 1.0]], D=np.zeros((2, 2)), F=np.zeros((1, 2)))
        report = check_assumptions(model, ExosystemModel((1.0,)).E)
        assert not report.stabilizable
        with pytest.raises(AssumptionError, match="not stabilizable"):
            require_assumptions(model, ExosystemModel((1.0,)).E)

    def test_transmission_zero_at_leader_frequency(self):
        """A plant with a zero at s = +-j blocks tracking of a unit-frequency leader"""
        # (s^2 + 1) / (s + 1)^3 in controllable canonical form
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -3.0, -3.0]])
        model = AgentModel(A=A, B=[[0.0], [0.0], [1.0]], C=[[1.0, 0.0, 1.0]], D=np.zeros((3, 2)), F=np.zeros((1, 2)))
        report = check_assumptions(model, ExosystemModel((1.0,)).E)
        assert report.stabilizable and report.observable
        assert not report.transmission_ok
        assert len(report.failing_eigenvalues) == 2


class TestPolePlacement:
    """Test the model-based initial gain helper"""

    def test_default_poles(self):
        """Closed loop has eigenvalues -1, -2, -3"""
        model = paper_agent(3)
        K = pole_placement_gain(model)
        eig = np.sort(np.linalg.eigvals(model.A - model.B @ K).real)
        np.testing.assert_allclose(eig, [-3.0, -2.0, -1.0], atol=1e-8)


class TestSimulate:
    """Test the world simulator"""

    def test_zero_dynamics_zero_log(self):
        """Zero leader, zero followers, zero controller"""
        model = AgentModel(A=np.zeros((2, 2)), B=np.eye(2)[:, :1], C=[[1.0, 0.0]], D=np.zeros((2, 2)), F=np.zeros((1, 2)))
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        log = sim.simulate([zero_controller()], 1.0, 1e-2, sim.initial_state([0.0, 0.0]))
        assert log.t.size == 101
        for arr in (log.v, log.x[0], log.u[0], log.e[0]):
            np.testing.assert_array_equal(arr, 0.0)

    def test_exosystem_periodicity(self):
        """v returns to v(0) after one period"""
        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        dt = 2 * np.pi / 6000
        log = sim.simulate([zero_controller()], 2 * np.pi, dt, sim.initial_state([0.3, 1.0]))
        np.testing.assert_allclose(log.v[-1], [0.3, 1.0], atol=1e-6)

    def test_rejects_non_dividing_dt(self):
        """dt must divide the duration"""
        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        with pytest.raises(ValueError, match="does not divide"):
            sim.simulate([zero_controller()], 1.0, 0.3, sim.initial_state([0.0, 1.0]))

    def test_divergence_reports_agent(self):
        """An unstable follower trips the guard with its index and time"""
        stable = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]], index=1)
        unstable = AgentModel(A=[[20.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]], index=2)
        sim = WorldSimulator(ExosystemModel((1.0,)), [stable, unstable])
        state = sim.initial_state([0.0, 1.0], x0=[[1.0], [1.0]])
        with pytest.raises(DivergenceError) as excinfo:
            sim.simulate([zero_controller(), zero_controller()], 2.0, 1e-3, state)
        assert excinfo.value.agent == 2
        assert 0.8 < excinfo.value.time < 1.0

    def test_controller_sees_true_leader_without_network(self):
        """Without observers eta is the true leader state at every grid evaluation"""
        seen = {}

        def spy(t, x, eta):
            # the grid call at t_k follows the last RK4 stage landing on t_k
            seen[round(t, 9)] = eta.copy()
            return np.zeros(1)

        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        log = sim.simulate([spy], 0.1, 1e-2, sim.initial_state([0.0, 1.0]))
        np.testing.assert_array_equal(log.eta[:, 0, :], log.v)
        for k, t in enumerate(log.t):
            np.testing.assert_array_equal(seen[round(float(t), 9)], log.v[k])

    def test_controller_evaluated_at_stages(self):
        """A time-varying input is sampled inside each step, not only on the grid"""
        times = []

        def clock(t, x, eta):
            times.append(t)
            return np.zeros(1)

        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        sim.simulate([clock], 0.02, 1e-2, sim.initial_state([0.0, 1.0]))
        assert times == pytest.approx([0.0, 0.005, 0.005, 0.01, 0.01, 0.015, 0.015, 0.02, 0.02])

    def test_forced_integrator_exact(self):
        """x_dot = u with u = t integrates to t^2 / 2"""
        model = AgentModel(A=[[0.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model])
        log = sim.simulate([lambda t, x, eta: np.array([t])], 1.0, 1e-2, sim.initial_state([0.0, 1.0]))
        np.testing.assert_allclose(log.x[0][:, 0], 0.5 * log.t ** 2, atol=1e-12)
        np.testing.assert_allclose(log.u[0][:, 0], log.t, atol=1e-15)

    def test_controller_count_checked(self):
        """One controller per follower"""
        sim = WorldSimulator(ExosystemModel((1.0, 0.75)), [paper_agent(1)])
        with pytest.raises(DimensionError):
            sim.simulate([], 1.0, 1e-3, sim.initial_state([0.0, 1.0, 0.0, 0.5]))

    def test_oracle_controller_regulates(self):
        """u = -K* x + L* v drives the tracking error to zero"""
        exo = ExosystemModel((1.0, 0.75))
        model = paper_agent(1)
        opt = optimal_policy(model, exo.E, np.eye(3), np.eye(1))
        sim = WorldSimulator(exo, [model])
        log = sim.simulate([LinearController(opt.K, opt.L)], 10.0, 1e-3, sim.initial_state([0.0, 1.0, 0.0, 0.5]))
        err = np.abs(log.e[0][:, 0])
        assert err[log.t >= 8.0].max() < 1e-3
        assert err[log.t >= 8.0].max() < err[log.t <= 1.0].max()

    def test_eps_norm_logged_with_network(self):
        """Observer local errors are logged per follower"""
        graph = CommGraph.chain(2, targets=[1])
        network = ObserverNetwork(graph, ObserverGains((15.0,), (40.0,)))
        model = AgentModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0, 0.0]], F=[[0.0, 0.0]])
        sim = WorldSimulator(ExosystemModel((1.0,)), [model, model], network)
        log = sim.simulate([zero_controller(), zero_controller()], 0.5, 1e-3, sim.initial_state([0.0, 1.0]))
        assert log.eps_norm.shape == (501, 2)
        # Follower 1 starts at eta = 0 while v = [0, 1]
        assert log.eps_norm[0, 0] == pytest.approx(1.0)
        assert log.eps_norm[0, 1] == 0.0


class TestTrajectoryLog:
    """Test CSV export and final-state handoff"""

    @pytest.fixture
    def log(self):
        graph = CommGraph.chain(2, targets=[1])
        network = ObserverNetwork(graph, ObserverGains((15.0, 15.0), (40.0, 40.0)))
        sim = WorldSimulator(ExosystemModel((1.0, 0.75)), [paper_agent(1), paper_agent(2)], network)
        controllers = [LinearController(pole_placement_gain(paper_agent(i))) for i in (1, 2)]
        return sim.simulate(controllers, 0.2, 1e-3, sim.initial_state([0.0, 1.0, 0.0, 0.5]))

    def test_frame_columns(self, log):
        """Documented column naming"""
        frame = log.to_frame()
        for col in ('t', 'v1', 'v4', 'x_1_1', 'x_2_3', 'u_1_1', 'eta_2_4', 'e_1_1', 'what_1_2', 'eps_2'):
            assert col in frame.columns
        assert len(frame) == 201

    def test_csv_round_trip(self, log, tmp_path):
        """from_csv restores every logged array"""
        path = log.to_csv(tmp_path / "log.csv")
        restored = TrajectoryLog.from_csv(path)
        np.testing.assert_array_equal(restored.t, log.t)
        np.testing.assert_array_equal(restored.x[1], log.x[1])
        np.testing.assert_array_equal(restored.eta, log.eta)
        np.testing.assert_array_equal(restored.w_hat, log.w_hat)
        np.testing.assert_array_equal(restored.v, log.v)
        np.testing.assert_array_equal(restored.u[0], log.u[0])
        np.testing.assert_array_equal(restored.e[1], log.e[1])
        np.testing.assert_array_equal(restored.eps_norm, log.eps_norm)

    def test_final_state_continues_run(self, log):
        """final_state is the last logged sample"""
        state = log.final_state()
        assert state.t == pytest.approx(0.2)
        np.testing.assert_array_equal(state.x[0], log.x[0][-1])
        np.testing.assert_array_equal(state.eta, log.eta[-1])

    def test_concatenate_keeps_shared_sample_once(self, log):
        """A continuation starts on the previous last sample"""
        sim = WorldSimulator(ExosystemModel((1.0, 0.75)), [paper_agent(1), paper_agent(2)],
                             ObserverNetwork(CommGraph.chain(2, targets=[1]), ObserverGains((15.0, 15.0), (40.0, 40.0))))
        controllers = [LinearController(pole_placement_gain(paper_agent(i))) for i in (1, 2)]
        more = sim.simulate(controllers, 0.1, 1e-3, log.final_state())
        whole = TrajectoryLog.concatenate([log, more])
        assert whole.t.size == 301
        assert whole.t[-1] == pytest.approx(0.3)
        np.testing.assert_array_equal(whole.x[1][:201], log.x[1])
        np.testing.assert_array_equal(whole.eta[201:], more.eta[1:])

    def test_concatenate_rejects_gap(self, log):
        with pytest.raises(ValueError, match="does not continue"):
            TrajectoryLog.concatenate([log, log])
        with pytest.raises(ValueError, match="Nothing"):
            TrajectoryLog.concatenate([])

    def test_slice_thins_every_field(self, log):
        thin = log.slice(0, log.t.size, 10)
        assert thin.t.size == 21
        assert thin.dt == pytest.approx(0.01)
        np.testing.assert_array_equal(thin.u[0], log.u[0][::10])
        np.testing.assert_array_equal(thin.w_hat, log.w_hat[::10])

    def test_index_of_off_grid(self, log):
        """Off-grid times are rejected"""
        assert log.index_of(0.1) == 100
        with pytest.raises(ValueError, match="not on the log grid"):
            log.index_of(0.1005)
