"""
coorp-adp

Data-driven cooperative optimal output regulation for leader-follower networks
of linear agents whose leader is an unknown harmonic oscillator.

This package provides:
- CommGraph: follower graph with adjacency, Laplacian and target matrices
- WorldSimulator: RK4 co-simulation of leader, followers and adaptive observers
- Data collection: quadrature matrices and the excitation rank check
- AgentLearner: off-policy policy iteration plus a data-driven regulator solve
- Oracle: Kleinman iteration and exact regulator equations for ground truth
- ExperimentRunner: end-to-end runs, reports and the `coorp-adp` CLI

Example:
    from coorp_adp import paper_config, reproduce_paper

    report, rows = reproduce_paper(paper_config())
    for policy in report.policies:
        print(policy.agent, policy.L)
"""

from .config import ExperimentConfig, apply_env_overrides, load_config, load_environment, paper_config
from .datacollect import (
    BasisFamily,
    DataMatrices,
    accumulate,
    build_data_family,
    load_data,
    null_basis,
    rank_condition,
    save_data,
    vecs,
    vecv,
)
from .exceptions import (
    AssumptionError,
    ConfigurationError,
    ConvergenceError,
    CoorpError,
    DimensionError,
    DivergenceError,
    ExcitationError,
    ExperimentError,
    InstabilityError,
    RegulatorError,
    ReportError,
    TopologyError,
)
from .harness import (
    ExperimentRunner,
    ResultsReport,
    acceptance_table,
    emit,
    load_report,
    replay_experiment,
    reproduce_paper,
    run_experiment,
)
from .learner import (
    AgentLearner,
    LearnedPolicy,
    adp_solve_step,
    control_law,
    extract_sylvester,
    feedforward_gain,
    learn_all,
    learn_feedback,
    solve_regulator,
)
from .logger import setup_logger
from .observer import ObserverGains, ObserverNetwork, ObserverState, assemble_Ehat, local_error, observer_rhs
from .oracle import OracleSolution, exact_regulator, kleinman, lyapunov_solve, optimal_policy
from .plant import (
    AgentModel,
    ExosystemModel,
    NoiseSpec,
    TrajectoryLog,
    WorldSimulator,
    exploration_noise,
    paper_agent,
    step_exosystem,
    step_follower,
    tracking_error,
)
from .topology import CommGraph, adjacency, laplacian, target_matrix

__all__ = [
    'CommGraph', 'adjacency', 'laplacian', 'target_matrix',
    'AgentModel', 'ExosystemModel', 'NoiseSpec', 'TrajectoryLog', 'WorldSimulator',
    'exploration_noise', 'paper_agent', 'step_exosystem', 'step_follower', 'tracking_error',
    'ObserverGains', 'ObserverNetwork', 'ObserverState', 'assemble_Ehat', 'local_error', 'observer_rhs',
    'BasisFamily', 'DataMatrices', 'accumulate', 'build_data_family', 'load_data', 'null_basis',
    'rank_condition', 'save_data',
    'vecs', 'vecv',
    'AgentLearner', 'LearnedPolicy', 'adp_solve_step', 'control_law', 'extract_sylvester',
    'feedforward_gain', 'learn_all', 'learn_feedback', 'solve_regulator',
    'OracleSolution', 'exact_regulator', 'kleinman', 'lyapunov_solve', 'optimal_policy',
    'ExperimentConfig', 'apply_env_overrides', 'load_config', 'load_environment', 'paper_config',
    'ExperimentRunner', 'ResultsReport', 'acceptance_table', 'emit', 'load_report',
    'replay_experiment', 'reproduce_paper', 'run_experiment',
    'setup_logger',
    # Exceptions
    'CoorpError',
    'ConfigurationError',
    'DimensionError',
    'TopologyError',
    'AssumptionError',
    'DivergenceError',
    'ExcitationError',
    'InstabilityError',
    'ConvergenceError',
    'RegulatorError',
    'ReportError',
    'ExperimentError',
]

__version__ = '0.1.0'
