"""
Command-line entry point.

    coorp-adp run configs/paper_example.toml --out results/
    coorp-adp reproduce-paper --format csv-bundle
    coorp-adp run configs/paper_example.toml --dump-data data/
    coorp-adp run configs/paper_example.toml --replay data/
    coorp-adp oracle configs/paper_example.toml
    coorp-adp check configs/paper_example.toml

Human-readable tables go to stderr; machine-readable failure lists go to stdout.
Exit codes: 0 pass, 1 acceptance miss, 2 error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import ExperimentConfig, apply_env_overrides, load_config, load_environment, paper_config
from .exceptions import ConfigurationError, CoorpError, ExperimentError
from .harness import (
    AcceptanceRow,
    ResultsReport,
    acceptance_table,
    check,
    emit,
    replay_experiment,
    run_experiment,
    run_oracle,
)
from .logger import setup_logger

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_ERROR = 2

console = Console(stderr=True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Exploration noise seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--dt", type=float, help="Integration step in seconds")
    common.add_argument("--observer-warmup", type=float, help="Observer-only time before data collection")
    common.add_argument("--format", choices=("json", "csv-bundle"), default="json", help="Output format")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    data = argparse.ArgumentParser(add_help=False)
    source = data.add_mutually_exclusive_group()
    source.add_argument("--dump-data", type=Path, metavar="DIR", help="Save per-agent data matrices to DIR")
    source.add_argument("--replay", type=Path, metavar="DIR", help="Learn from matrices saved with --dump-data")

    parser = argparse.ArgumentParser(
        prog="coorp-adp",
        description="Data-driven cooperative optimal output regulation experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common, data], help="Run an experiment from a TOML config")
    run.add_argument("config", type=Path)
    sub.add_parser("reproduce-paper", parents=[common, data], help="Run the built-in four-follower example")
    oracle = sub.add_parser("oracle", parents=[common], help="Model-based optimal gains only")
    oracle.add_argument("config", type=Path)
    chk = sub.add_parser("check", parents=[common], help="Validate graph and agent assumptions")
    chk.add_argument("config", type=Path)
    return parser


def _with_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """CLI flags win over environment overrides, which win over the file"""
    config = apply_env_overrides(config)
    data = config.model_dump()
    if args.seed is not None:
        data['noise']['seed'] = args.seed
    if args.dt is not None:
        data['simulation']['dt'] = args.dt
    if args.observer_warmup is not None:
        data['learning']['observer_warmup'] = args.observer_warmup
    if args.out is not None:
        data['out_dir'] = args.out
    if args.log_level is not None:
        data['log_level'] = args.log_level
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Command-line overrides produce an invalid config:\n{e}") from e


def _acceptance(rows: Sequence[AcceptanceRow]) -> Table:
    table = Table(title="Acceptance")
    for column in ("criterion", "agent", "value", "threshold", "result"):
        table.add_column(column)
    for row in rows:
        table.add_row(
            row.criterion,
            "" if row.agent is None else str(row.agent),
            f"{row.value:.4g}",
            f"{row.threshold:.4g}",
            "[green]pass[/green]" if row.passed else "[red]FAIL[/red]",
        )
    return table


def _gains(report: ResultsReport) -> Table:
    table = Table(title=f"Learned vs optimal feedforward gains ({report.name})")
    for column in ("agent", "iterations", "L learned", "L optimal", "||L - L*||"):
        table.add_column(column)
    for policy, opt, gap in zip(report.policies, report.oracle, report.gaps):
        table.add_row(
            str(policy.agent),
            str(policy.iterations),
            " ".join(f"{x:.4f}" for x in policy.L.ravel()),
            " ".join(f"{x:.4f}" for x in opt.L.ravel()),
            f"{gap['L_gap']:.2e}",
        )
    return table


def _finish(rows: List[AcceptanceRow]) -> int:
    failures = [row.to_dict() for row in rows if not row.passed]
    if failures:
        print(json.dumps({'failures': failures}, indent=2))
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _run(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if args.replay is not None:
        report = replay_experiment(config, args.replay)
    else:
        report = run_experiment(config, dump_dir=args.dump_data)
    fmt = args.format
    rows = acceptance_table(report)
    written = emit(report, fmt, config.out_dir)
    console.print(_gains(report))
    console.print(_acceptance(rows))
    console.print(f"Wrote {', '.join(str(p) for p in written)}")
    return _finish(rows)


def _oracle(config: ExperimentConfig) -> int:
    solutions = run_oracle(config)
    table = Table(title="Optimal gains")
    for column in ("agent", "K*", "L*", "Kleinman iterations"):
        table.add_column(column)
    for sol in solutions:
        table.add_row(
            str(sol.agent),
            " ".join(f"{x:.4f}" for x in sol.K.ravel()),
            " ".join(f"{x:.4f}" for x in sol.L.ravel()),
            str(sol.iterations),
        )
    console.print(table)
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / 'oracle.json').write_text(json.dumps([s.to_dict() for s in solutions], indent=2))
    except OSError as e:
        raise ConfigurationError(f"Cannot write to output directory {out_dir}: {e}") from e
    return EXIT_OK


def _check(config: ExperimentConfig) -> int:
    report = check(config)
    table = Table(title="Structural checks")
    for column in ("item", "stabilizable", "observable", "transmission", "result"):
        table.add_column(column)
    table.add_row("graph", "", "", "", "[green]ok[/green]" if report.graph_ok else f"[red]{report.graph_message}[/red]")
    for agent in report.agents:
        table.add_row(
            f"agent {agent['agent']}",
            str(agent['stabilizable']),
            str(agent['observable']),
            str(agent['transmission_ok']),
            "[green]ok[/green]" if agent['ok'] else "[red]FAIL[/red]",
        )
    console.print(table)
    if not report.ok:
        print(json.dumps({'failures': report.to_dict()}, indent=2))
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    level = args.log_level or os.getenv('COORP_LOG_LEVEL') or 'INFO'
    try:
        logger = setup_logger('coorp_adp', level)
    except ValueError:
        logger = setup_logger('coorp_adp', logging.INFO)
        logger.warning(f"Unknown log level {level!r}, using INFO")

    try:
        config = paper_config() if args.command == 'reproduce-paper' else load_config(args.config)
        config = _with_overrides(config, args)
        if args.command in ('run', 'reproduce-paper'):
            return _run(config, args)
        if args.command == 'oracle':
            return _oracle(config)
        return _check(config)
    except ExperimentError as e:
        console.print(f"[red]❌ {e}[/red]")
        print(json.dumps({'error': e.to_dict()}, indent=2))
        return EXIT_ERROR
    except CoorpError as e:
        console.print(f"[red]❌ {type(e).__name__}: {e}[/red]")
        print(json.dumps({'error': {'error': type(e).__name__, 'message': str(e)}}, indent=2))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
