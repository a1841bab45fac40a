"""
Command-line entry point of the distillation lab.

    python main.py <command> [--config FILE] [--seed N] [--out-dir DIR] [-v]

Every command prints its JSON result record to stdout and exits 0; a
LabError is printed as {"success": false, "error": ...} with exit code 1.
`serve` starts the MCP tool server on stdio instead.
"""

import argparse
import json
import logging
import os
import sys
import traceback

from distill_lab import commands
from distill_lab.console import configure_logging
from distill_lab.errors import ConfigError, LabError, error_record
from distill_lab.harness.config import METHODS, ExperimentConfig, load_config, with_overrides

logger = logging.getLogger("distill_lab")

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(BASE_DIR, "config", "default.json")


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _method_list(text: str):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown method(s) {unknown}; available: {', '.join(METHODS)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML experiment config (default: config/default.json)")
    common.add_argument("--seed", type=int, help="Run a single seed instead of the config's seed list")
    common.add_argument("--out-dir", default="out", help="Artifact directory (default: out)")
    common.add_argument("--log-every", type=int, help="Progress line every N iterations")
    common.add_argument("-v", "--verbose", action="count", default=1, help="Repeat for debug output")
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    parser = argparse.ArgumentParser(prog="distill-lab", description="Adaptive center distillation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="Generate and save the synthetic dataset")
    data_source = argparse.ArgumentParser(add_help=False)
    data_source.add_argument("--dataset", help="Saved dataset (gen-data output) to use instead of regenerating it")

    sub.add_parser(
        "train-teacher", parents=[common, data_source], help="Train and save a teacher with its class centers"
    )

    distill = sub.add_parser("distill", parents=[common, data_source], help="Distill one student")
    distill.add_argument("--method", choices=METHODS, help="Override the config's method")
    distill.add_argument("--teacher-dir", help="Directory of a saved teacher (train-teacher output)")

    evaluate = sub.add_parser("evaluate", parents=[common, data_source], help="Evaluate a saved network")
    evaluate.add_argument("--model", required=True, help="Saved network file")
    evaluate.add_argument("--roc-csv", action="store_true", help="Also write roc.csv")

    compare = sub.add_parser("compare", parents=[common], help="Compare methods over seeds")
    compare.add_argument("--methods", type=_method_list, help="Comma-separated methods (default: all)")
    compare.add_argument("--workers", type=int, default=1, help="Worker processes for independent runs")

    sweep = sub.add_parser("sweep", parents=[common], help="Margin sweep of the adaptive method")
    sweep.add_argument("--kind", choices=("arc", "cos"), default="arc")
    sweep.add_argument("--values", type=_float_list, help="Comma-separated margins (default per kind)")
    sweep.add_argument("--workers", type=int, default=1)

    analyze = sub.add_parser("analyze-centers", parents=[common, data_source], help="Sample vs center score distributions")
    analyze.add_argument("--teacher-dir", help="Directory of a saved teacher; trained when omitted")

    serve = sub.add_parser("serve", help="Run the MCP tool server on stdio")
    serve.add_argument("--base-dir", default=BASE_DIR, help="Directory receiving runs/ (default: repository)")
    serve.add_argument("-v", "--verbose", action="count", default=1)
    return parser


def _load(args) -> ExperimentConfig:
    path = args.config or DEFAULT_CONFIG
    if args.config is None and not os.path.exists(path):
        cfg = ExperimentConfig()
    else:
        cfg = load_config(path)
    return with_overrides(cfg, seed=args.seed, method=getattr(args, "method", None), log_every=args.log_every)


def run_command(args) -> dict:
    cfg = _load(args)
    out_dir = args.out_dir
    if args.command == "gen-data":
        return commands.gen_data(cfg, out_dir)
    if args.command == "train-teacher":
        return commands.train_teacher_command(cfg, out_dir, args.dataset)
    if args.command == "distill":
        return commands.distill_command(cfg, out_dir, args.teacher_dir, args.dataset)
    if args.command == "evaluate":
        return commands.evaluate_command(cfg, args.model, out_dir, args.roc_csv, args.dataset)
    if args.command == "compare":
        return commands.compare_command(cfg, out_dir, args.methods, args.workers)
    if args.command == "sweep":
        return commands.sweep_command(cfg, out_dir, args.kind, args.values, args.workers)
    if args.command == "analyze-centers":
        return commands.analyze_centers_command(cfg, out_dir, args.teacher_dir, args.dataset)
    raise ConfigError(f"Unknown command '{args.command}'")


def serve(base_dir: str) -> int:
    """Start the MCP tool server, reporting component status the way the server always has."""
    component_status = {
        "mcp_server": {"initialized": False, "error": None},
        "lab_tools": {"initialized": False, "error": None},
    }
    try:
        from mcp.server.fastmcp import FastMCP

        mcp = FastMCP("Distillation Lab MCP Server")
        component_status["mcp_server"]["initialized"] = True
    except Exception as e:
        logger.critical(f"MCP Server failed to initialize: {e}")
        logger.debug(traceback.format_exc())
        return 1

    try:
        from distill_lab.server import LabToolServer

        LabToolServer(mcp, base_dir).register_tools()
        component_status["lab_tools"]["initialized"] = True
    except Exception as e:
        component_status["lab_tools"]["error"] = str(e)
        logger.error(f"Lab tools failed to initialize: {e}")

    healthy = sum(1 for status in component_status.values() if status["initialized"])
    logger.info(f"Distillation Lab MCP Server started (System Health: {100.0 * healthy / len(component_status):.1f}%)")
    for name, status in component_status.items():
        state = "RUNNING" if status["initialized"] else "FAILED"
        logger.info(f"- {name.replace('_', ' ').title()}: {state}")
        if status["error"]:
            logger.info(f"  Error: {status['error']}")

    try:
        mcp.run()
    except Exception as e:
        logger.critical(f"MCP Server run failed: {e}")
        logger.debug(traceback.format_exc())
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbosity = 0 if getattr(args, "quiet", False) else args.verbose
    configure_logging(verbosity)

    if args.command == "serve":
        return serve(args.base_dir)

    try:
        record = run_command(args)
    except LabError as e:
        logger.error(e.message)
        print(json.dumps(e.to_record(), sort_keys=True))
        return 1
    except Exception as e:
        record = error_record(e)
        logger.error(f"{args.command} failed: {record['message']}")
        logger.debug(traceback.format_exc())
        print(json.dumps(record, sort_keys=True))
        return 1
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
