#!/usr/bin/env python3
"""
Command-line entry point for exposure-panel analyses

    python -m exposure_panel <command> [--config run.yml] [--seed N] [--out DIR]
                             [--threads N] [--debug] [--<key-name> VALUE ...]

Every command writes <out>/<command>/report.json plus its CSV side tables.
Failures write <out>/error.json and exit 2 (invalid configuration) or 1.
"""

import argparse
import logging
import os
import sqlite3
import sys
from logging.handlers import RotatingFileHandler
from typing import Dict, List, Optional, Sequence

from . import __version__
from .audit import AuditLog
from .commands import COMMAND_HANDLERS
from .config_manager import COMMAND_SCHEMAS, COMMANDS, RunConfigManager
from .exceptions import ExposurePanelError, ValidationError
from .reporting import dumps, write_error_record
from .run_ledger import RunLedger
from .validation_utils import parse_cli_value, sanitize_path

logger = logging.getLogger(__name__)

LOG_FILE_NAME = 'exposure-panel.log'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

EXIT_OK = 0
EXIT_ANALYSIS_ERROR = 1
EXIT_VALIDATION_ERROR = 2

_installed_handlers: List[logging.Handler] = []


def setup_logging(out_dir: str, debug: bool = False) -> str:
    """
    Attach a rotating file handler and a stdout handler to the root logger

    Returns:
        Path of the log file
    """
    log_dir = os.path.join(out_dir, 'logs')
    try:
        os.makedirs(log_dir, exist_ok=True)
    except OSError:
        # Fall back to a logs directory next to the package
        log_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'logs')
        os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, LOG_FILE_NAME)
    level = logging.DEBUG if debug else logging.INFO

    root_logger = logging.getLogger()
    for handler in _installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    # 10MB per file, keep 5 backups
    file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5, encoding='utf-8')
    file_handler.setLevel(level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))

    root_logger.setLevel(level)
    for handler in (file_handler, console_handler):
        root_logger.addHandler(handler)
        _installed_handlers.append(handler)
    return log_file


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML run configuration')
    common.add_argument('--seed', type=int, help='random seed (0 to 2^64-1)')
    common.add_argument('--out', default='out', help='output directory (default: out)')
    common.add_argument('--threads', type=int, help='worker threads (default: $EXPOSURE_PANEL_THREADS or 1)')
    common.add_argument('--debug', action='store_true', help='log at DEBUG level')

    parser = argparse.ArgumentParser(
        prog='exposure-panel',
        description='Spatial panel causal inference for neighborhood GenAI exposure and wages',
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    for command in COMMANDS:
        sub = subparsers.add_parser(command, parents=[common], help=f"run {command}")
        overrides = sub.add_argument_group('configuration overrides')
        for key in COMMAND_SCHEMAS[command]:
            help_text = key.help or ''
            if key.default not in (None, [], {}):
                help_text = f"{help_text} (default: {key.default})".strip()
            overrides.add_argument(key.flag, dest=f"override_{key.name}", metavar=key.kind.upper(),
                                   help=help_text or None)
    return parser


def collect_overrides(command: str, args: argparse.Namespace) -> Dict:
    """
    Typed per-key overrides from the parsed arguments

    Raises:
        ValidationError: listing every override that failed to parse
    """
    overrides, errors = {}, []
    for key in COMMAND_SCHEMAS[command]:
        raw = getattr(args, f"override_{key.name}", None)
        if raw is None:
            continue
        try:
            overrides[key.name] = parse_cli_value(key.kind, raw)
        except ValueError as e:
            errors.append(f"{key.name}: {e}")
    if errors:
        raise ValidationError(errors)
    return overrides


def _ledger(out_dir: str) -> Optional[RunLedger]:
    try:
        return RunLedger(os.path.join(out_dir, 'runs.db'))
    except (sqlite3.Error, OSError) as e:
        logger.warning(f"Run ledger unavailable: {e}")
        return None


def _finish(ledger: Optional[RunLedger], run_id: Optional[str], status: str,
            report_path: Optional[str] = None, error: Optional[str] = None) -> None:
    if ledger is None or run_id is None:
        return
    try:
        ledger.finish_run(run_id, status, report_path, error)
    except sqlite3.Error as e:
        logger.warning(f"Could not update run ledger: {e}")


def run(command: str, args: argparse.Namespace) -> int:
    out_root = sanitize_path(args.out) or os.path.abspath('out')
    log_file = setup_logging(out_root, args.debug)
    ledger, run_id = None, None
    try:
        manager = RunConfigManager(args.config)
        config = manager.resolve(command, collect_overrides(command, args), args.seed, args.threads)

        logger.info('=' * 60)
        logger.info(f"exposure-panel {__version__}: {command}")
        logger.info(f"Config hash: {config.fingerprint}")
        logger.info(f"Seed: {config.seed}, threads: {config.threads}")
        logger.info(f"Log file: {log_file}")
        logger.info('=' * 60)

        ledger = _ledger(out_root)
        if ledger is not None:
            try:
                run_id = ledger.start_run(command, config.fingerprint, config.to_dict())
            except sqlite3.Error as e:
                logger.warning(f"Could not record run in ledger: {e}")

        out_dir = os.path.join(out_root, command)
        os.makedirs(out_dir, exist_ok=True)
        audit = AuditLog()
        report = COMMAND_HANDLERS[command](config, out_dir, audit)
        report.audit = audit.tally()
        audit.write_jsonl(os.path.join(out_dir, 'audit.jsonl'))
        report_path = report.write(os.path.join(out_dir, 'report.json'))
        for table in report.tables.values():
            sys.stdout.write(table)
        _finish(ledger, run_id, 'SUCCESS', report_path)
        logger.info(f"{command} finished: {report_path}")
        return EXIT_OK
    except ExposurePanelError as e:
        record = write_error_record(e, os.path.join(out_root, 'error.json'))
        sys.stderr.write(dumps(record))
        logger.error(f"{command} failed: {e}")
        _finish(ledger, run_id, 'FAILED', error=e.message)
        return EXIT_VALIDATION_ERROR if isinstance(e, ValidationError) else EXIT_ANALYSIS_ERROR
    except Exception as e:
        logger.exception(f"{command} failed with an unexpected error")
        record = write_error_record(e, os.path.join(out_root, 'error.json'))
        sys.stderr.write(dumps(record))
        _finish(ledger, run_id, 'FAILED', error=str(e))
        return EXIT_ANALYSIS_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args)


if __name__ == '__main__':
    sys.exit(main())
