"""
latro command-line entry point.

    latro run <config> [--output DIR] [--solver standard|rb]
    latro compare <report_a> <report_b>
    latro validate <config>
"""
import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from config import LatroSettings, SolverKind, load_run_config
from runner import build_model, compare_reports, run
from utils.error_handler import EXIT_OK, handle_run_error
from utils.logging import setup_logging
from utils.report_formatter import format_comparison, format_report_summary

logger = logging.getLogger(__name__)


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.solver:
        config.solver.solver = SolverKind(args.solver)
    report = run(config, args.output)
    print(format_report_summary(report.model_dump(mode="json")))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    model, _ = build_model(config)
    print(f"{args.config}: valid ({model.n_cells} cells, {model.n_dofs} DOFs)")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    print(format_comparison(compare_reports(args.report_a, args.report_b)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latro", description="Hyperelastic lattice solver with reduced-basis FETI-DP")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Solve a configured problem and write its artifacts")
    p_run.add_argument("config", help="TOML or YAML run configuration")
    p_run.add_argument("--output", default=None, help="Output directory (overrides output.directory)")
    p_run.add_argument("--solver", choices=[k.value for k in SolverKind], default=None, help="Override solver.solver")
    p_run.set_defaults(handler=_cmd_run)

    p_val = sub.add_parser("validate", help="Validate a configuration and build its model without solving")
    p_val.add_argument("config")
    p_val.set_defaults(handler=_cmd_validate)

    p_cmp = sub.add_parser("compare", help="Compare two run reports of the same problem")
    p_cmp.add_argument("report_a", help="report.json or run directory")
    p_cmp.add_argument("report_b", help="report.json or run directory")
    p_cmp.set_defaults(handler=_cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    settings = LatroSettings()
    setup_logging(
        log_level=settings.log_level,
        verbosity=settings.verbosity,
        log_file=settings.log_file,
        log_json=settings.log_json,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:
        return handle_run_error(exc)


if __name__ == "__main__":
    sys.exit(main())
