"""
Unit tests for coorp_adp.cli

The experiment runner is mocked; these tests cover argument handling,
override precedence, output files and exit codes.
"""

import json

import numpy as np
import pytest

from coorp_adp import cli
from coorp_adp.exceptions import ExcitationError, ExperimentError
from coorp_adp.harness import ResultsReport, compute_gaps
from coorp_adp.learner import LearnedPolicy
from coorp_adp.oracle import OracleSolution

ENV_KEYS = ('COORP_SEED', 'COORP_DT', 'COORP_OUT_DIR', 'COORP_LOG_LEVEL')


@pytest.fixture(autouse=True)
def isolated(monkeypatch, tmp_path):
    """No stray .env files or COORP_* variables"""
    monkeypatch.chdir(tmp_path)
    for key in ENV_KEYS:
        monkeypatch.setenv(key, "")
        monkeypatch.delenv(key)


def fake_report(learned_L, optimal_L) -> ResultsReport:
    policy = LearnedPolicy(
        agent=1, P=np.eye(1), K=np.eye(1), L=np.array([learned_L]), X=np.zeros((1, 2)),
        U=np.array([learned_L]), alpha=np.zeros(0), iterations=3,
        history=[{'k': 1, 'delta': None}, {'k': 2, 'delta': 1e-3}, {'k': 3, 'delta': 1e-6}],
    )
    opt = OracleSolution(
        agent=1, P=np.eye(1), K=np.eye(1), X=np.zeros((1, 2)), U=np.array([optimal_L]), L=np.array([optimal_L]),
    )
    return ResultsReport(
        name="fake", config={}, policies=[policy], oracle=[opt], gaps=compute_gaps([policy], [opt]),
    )


class TestParser:

    def test_requires_command(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_run_arguments(self):
        args = cli.build_parser().parse_args(['run', 'cfg.toml', '--seed', '4', '--format', 'csv-bundle'])
        assert args.command == 'run'
        assert args.seed == 4
        assert args.format == 'csv-bundle'

    def test_bad_format(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(['reproduce-paper', '--format', 'xml'])


class TestRun:

    def test_pass_exits_zero(self, mocker, config_toml, tmp_path, capsys):
        run = mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0, 2.0], [1.0, 2.0]))
        code = cli.main(['run', str(config_toml), '--out', str(tmp_path / 'out')])
        assert code == cli.EXIT_OK
        assert (tmp_path / 'out' / 'results.json').exists()
        assert run.call_args.args[0].out_dir == str(tmp_path / 'out')
        assert capsys.readouterr().out == ''

    def test_acceptance_miss_exits_one(self, mocker, config_toml, tmp_path, capsys):
        mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0, 3.0], [1.0, 2.0]))
        code = cli.main(['run', str(config_toml), '--out', str(tmp_path)])
        assert code == cli.EXIT_ACCEPTANCE
        failures = json.loads(capsys.readouterr().out)['failures']
        assert failures[0]['criterion'] == 'L vs oracle (relative)'
        assert failures[0]['agent'] == 1

    def test_experiment_error_exits_two(self, mocker, config_toml, capsys):
        cause = ExcitationError("rank 17 < 21", required_rank=21, achieved_rank=17)
        error = ExperimentError(str(cause), phase='data', agent=2, hint="more noise")
        error.__cause__ = cause
        mocker.patch.object(cli, 'run_experiment', side_effect=error)
        assert cli.main(['run', str(config_toml)]) == cli.EXIT_ERROR
        payload = json.loads(capsys.readouterr().out)['error']
        assert payload == {
            'error': 'ExcitationError', 'message': 'rank 17 < 21', 'phase': 'data', 'agent': 2, 'hint': 'more noise',
        }

    def test_missing_config_exits_two(self, capsys, tmp_path):
        assert cli.main(['run', str(tmp_path / 'absent.toml')]) == cli.EXIT_ERROR
        assert json.loads(capsys.readouterr().out)['error']['error'] == 'ConfigurationError'

    def test_flag_overrides_environment(self, mocker, config_toml, monkeypatch, tmp_path):
        """--seed beats COORP_SEED, COORP_DT applies when no flag is given"""
        monkeypatch.setenv('COORP_SEED', '5')
        monkeypatch.setenv('COORP_DT', '0.0005')
        run = mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0], [1.0]))
        cli.main(['run', str(config_toml), '--seed', '9', '--out', str(tmp_path)])
        config = run.call_args.args[0]
        assert config.noise.seed == 9
        assert config.simulation.dt == 0.0005

    def test_invalid_override_exits_two(self, mocker, config_toml, capsys):
        run = mocker.patch.object(cli, 'run_experiment')
        assert cli.main(['run', str(config_toml), '--dt', '0.003']) == cli.EXIT_ERROR
        run.assert_not_called()
        assert 'Command-line overrides' in json.loads(capsys.readouterr().out)['error']['message']

    def test_reproduce_uses_builtin_example(self, mocker, tmp_path):
        run = mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0], [1.0]))
        mocker.patch.object(cli, 'acceptance_table', return_value=[])
        assert cli.main(['reproduce-paper', '--out', str(tmp_path), '--format', 'csv-bundle']) == cli.EXIT_OK
        assert run.call_args.args[0].name == 'paper-example'
        assert (tmp_path / 'convergence.csv').exists()

    def test_dump_data_passed_to_runner(self, mocker, config_toml, tmp_path):
        run = mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0], [1.0]))
        cli.main(['run', str(config_toml), '--out', str(tmp_path), '--dump-data', str(tmp_path / 'data')])
        assert run.call_args.kwargs['dump_dir'] == tmp_path / 'data'

    def test_no_dump_by_default(self, mocker, config_toml, tmp_path):
        run = mocker.patch.object(cli, 'run_experiment', return_value=fake_report([1.0], [1.0]))
        cli.main(['run', str(config_toml), '--out', str(tmp_path)])
        assert run.call_args.kwargs['dump_dir'] is None

    def test_replay_skips_simulation(self, mocker, config_toml, tmp_path):
        run = mocker.patch.object(cli, 'run_experiment')
        replay = mocker.patch.object(cli, 'replay_experiment', return_value=fake_report([1.0], [1.0]))
        code = cli.main(['run', str(config_toml), '--out', str(tmp_path), '--replay', str(tmp_path / 'data')])
        assert code == cli.EXIT_OK
        run.assert_not_called()
        assert replay.call_args.args[1] == tmp_path / 'data'

    def test_dump_and_replay_exclusive(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(['reproduce-paper', '--dump-data', 'a', '--replay', 'b'])


class TestOracleAndCheck:

    def test_oracle_writes_gains(self, config_toml, tmp_path):
        assert cli.main(['oracle', str(config_toml), '--out', str(tmp_path)]) == cli.EXIT_OK
        solutions = json.loads((tmp_path / 'oracle.json').read_text())
        assert [s['agent'] for s in solutions] == [1, 2]
        np.testing.assert_allclose(solutions[0]['L'][0], [2.8801, -11.9484, 16.4918, 12.4641], atol=1e-3)

    def test_check_passes(self, config_toml):
        assert cli.main(['check', str(config_toml)]) == cli.EXIT_OK

    def test_check_failure_listed(self, config_toml, capsys):
        config_toml.write_text(config_toml.read_text().replace('targets = [1]', 'targets = []'))
        assert cli.main(['check', str(config_toml)]) == cli.EXIT_ACCEPTANCE
        failures = json.loads(capsys.readouterr().out)['failures']
        assert failures['graph_ok'] is False


class TestLogLevel:

    def test_unknown_level_falls_back(self, mocker, config_toml):
        setup = mocker.patch.object(cli, 'setup_logger')
        mocker.patch.object(cli, 'run_oracle', return_value=[])
        setup.side_effect = [ValueError("Unknown log level: LOUD"), mocker.MagicMock()]
        cli.main(['oracle', str(config_toml), '--log-level', 'LOUD'])
        assert setup.call_count == 2
