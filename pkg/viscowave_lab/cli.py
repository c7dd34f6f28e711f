#!/usr/bin/env python3
"""
Command Line Module

Sub-commands simulate, well-depth, classify, decay-report, blowup-report,
mms and sweep. Exit codes: 0 success, 1 configuration error, 2 numerical
failure, 3 MMS order failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from rich.console import Console
from rich.markup import escape
from rich.table import Table

from . import __version__
from .config_loader import ConfigLoader
from .exceptions import ConfigError, InfeasibleError, PreconditionError
from .experiment import (EXIT_CONFIG, EXIT_MMS_ORDER, EXIT_NUMERICAL, EXIT_OK, blowup_report_from_dir,
                         classify_report, decay_report_from_dir, mms_report, run_simulation, run_sweep,
                         well_depth_report)
from .utils import setup_logging

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)


def summary_table(title: str, values: Dict) -> Table:
    """Two-column table of scalar summary entries (nested dicts are flattened)."""
    table = Table(title=title)
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right")
    for key, value in _flatten(values):
        if isinstance(value, float):
            value = f"{value:.6g}"
        table.add_row(key, str(value))
    return table


def _flatten(values: Dict, prefix: str = ""):
    for key, value in values.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, f"{name}.")
        elif not isinstance(value, (list, tuple)):
            yield name, value


# ========== Sub-commands ==========

def _load_config(args) -> Dict:
    config = ConfigLoader.load_experiment_config(args.config)
    if getattr(args, 'seed', None) is not None:
        config['seed'] = int(args.seed)
    return config


def cmd_simulate(args) -> int:
    config = _load_config(args)
    result = run_simulation(config, Path(args.out_dir))
    console.print(summary_table("Run", result.summary['run']))
    for section in ('decay', 'blowup'):
        if section in result.summary:
            console.print(summary_table(section.capitalize(), result.summary[section]))
    if result.exit_code == EXIT_NUMERICAL:
        err_console.print(f"[red]Numerical failure: {result.status.value}[/red]")
    return result.exit_code


def cmd_well_depth(args) -> int:
    config = _load_config(args)
    well = well_depth_report(config, Path(args.out_dir), args.dump_minimizer)
    console.print(summary_table("Well depth", well.summary()))
    if not well.converged:
        err_console.print("[yellow]Optimizer did not converge; see well.json[/yellow]")
    return EXIT_OK


def cmd_classify(args) -> int:
    config = _load_config(args)
    classification = classify_report(config, Path(args.out_dir))
    console.print(summary_table("Classification", classification.summary()))
    return EXIT_OK


def cmd_decay_report(args) -> int:
    report = decay_report_from_dir(Path(args.run_dir))
    console.print(summary_table("Decay", report.summary()))
    return EXIT_OK


def cmd_blowup_report(args) -> int:
    report = blowup_report_from_dir(Path(args.run_dir))
    console.print(summary_table("Blow-up", report.summary()))
    return EXIT_OK


def cmd_mms(args) -> int:
    config = _load_config(args)
    if args.first_order_start:
        config['solver']['first_order_start'] = True
    report = mms_report(config, Path(args.out_dir))
    table = Table(title="Manufactured solution study")
    for column in ("N", "dt", "L2 error", "relative", "status"):
        table.add_column(column, justify="right")
    for level in report.levels:
        table.add_row(str(level.N), f"{level.dt:.4g}", f"{level.error:.4e}",
                      f"{level.relative_error:.4e}", level.status.value)
    console.print(table)
    console.print(f"Observed order: {report.observed_order:.4f} (required {report.required_order})")
    if not report.passed:
        err_console.print(f"[red]Observed order {report.observed_order:.4f} below {report.required_order}[/red]")
        return EXIT_MMS_ORDER
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args)
    rows, exit_code = run_sweep(config, Path(args.out_dir), args.threads)
    keys = sorted(config['sweep']['grid'])
    table = Table(title=f"Sweep ({len(rows)} runs)")
    for column in ['index'] + keys + ['status', 'T_obs', 'fitted_slope', 'set']:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*[_cell(row.get(c)) for c in ['index'] + keys + ['status', 'T_obs', 'fitted_slope', 'set']])
    console.print(table)
    return exit_code


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


COMMANDS = {
    'simulate': cmd_simulate,
    'well-depth': cmd_well_depth,
    'classify': cmd_classify,
    'decay-report': cmd_decay_report,
    'blowup-report': cmd_blowup_report,
    'mms': cmd_mms,
    'sweep': cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viscowave",
        description="Viscoelastic wave lab: radial simulations, potential well, decay and blow-up analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help_text: str, out_default: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="Experiment configuration (YAML or JSON)")
        p.add_argument("--out-dir", default=out_default, help="Output directory")
        p.add_argument("--seed", type=int, default=None, help="Override the configured seed")
        return p

    with_config("simulate", "Run one trajectory and its reports", "runs/simulate")
    p = with_config("well-depth", "Compute the potential-well depth", "runs/well")
    p.add_argument("--dump-minimizer", action="store_true", help="Write the minimizer field as CSV")
    with_config("classify", "Classify the configured initial data against the well", "runs/classify")
    p = with_config("mms", "Manufactured-solution convergence study", "runs/mms")
    p.add_argument("--first-order-start", action="store_true",
                   help="Use the first-order start (harness self-test, expect order ~1)")
    p = with_config("sweep", "Run every combination of sweep.grid", "runs/sweep")
    p.add_argument("--threads", type=int, default=None, help="Worker processes (default 1)")

    for name, help_text in (("decay-report", "Refit the decay envelope of a run directory"),
                            ("blowup-report", "Recompute the blow-up report of a run directory")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--run-dir", required=True, help="Directory written by simulate")
    return parser


def _apply_overrides(args, env: Dict):
    """CLI flags take priority over the environment."""
    if getattr(args, 'threads', 'absent') is None:
        args.threads = env.get('threads', 1)


def _log_settings(args, env: Dict) -> Dict:
    settings = {'level': 'INFO', 'rich': False}
    config_path = getattr(args, 'config', None)
    if config_path:
        loader = ConfigLoader.load_json if Path(config_path).suffix.lower() == ".json" else ConfigLoader.load_yaml
        raw = loader(config_path) or {}
        if isinstance(raw, dict) and isinstance(raw.get('logging'), dict):
            settings.update(raw['logging'])
    if 'log_level' in env:
        settings['level'] = env['log_level']
    if args.log_level:
        settings['level'] = args.log_level
    return settings


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    env = ConfigLoader.load_env_overrides()
    _apply_overrides(args, env)

    settings = _log_settings(args, env)
    try:
        setup_logging(str(settings['level']), rich_console=bool(settings.get('rich')))
    except ValueError as e:
        err_console.print(f"[red]Configuration error: {escape(str(e))}[/red]")
        return EXIT_CONFIG

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        err_console.print(f"[red]Configuration error: {escape(str(e))}[/red]")
        return EXIT_CONFIG
    except InfeasibleError as e:
        err_console.print(f"[red]Infeasible request: {escape(str(e))}[/red]")
        return EXIT_CONFIG
    except PreconditionError as e:
        err_console.print(f"[red]Precondition failed: {escape(str(e))}[/red]")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        err_console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
