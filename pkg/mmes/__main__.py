"""
MMES command-line interface.
Runs image/tensor restoration and toy experiments with manifold modeling in embedded space.
"""
import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List

from mmes import __version__
from mmes.tools.config import TASKS, load_config
from mmes.tools.tasks import EXIT_CONFIG, run_sweep, run_task
from mmes.utils import ConfigError

# Log to stderr; stdout carries the JSON result summary
# Default to WARNING level, can be overridden with --debug flag
logging.basicConfig(
    level=logging.WARNING,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stderr,
    force=True
)
logger = logging.getLogger('mmes')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mmes', description='Manifold modeling in embedded space')
    parser.add_argument('task', choices=TASKS, help='Task to run')
    parser.add_argument('--config', required=True, help='TOML run configuration')
    parser.add_argument('--seed', type=int, default=None, help='Override the run seed')
    parser.add_argument('--threads', type=int, default=None, help='Worker processes for sweep runs')
    parser.add_argument('--out', default=None, help='Override the output directory')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    return parser


def _summary(result: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in result.items() if k != "report_record"}


def main(argv: List[str] | None = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)

    if args.debug:
        logger.setLevel(logging.DEBUG)
        logger.debug("Debug logging enabled")

    logger.info("=" * 50)
    logger.info(f"Starting mmes {args.task}")
    logger.info(f"Python version: {sys.version}")
    logger.info("=" * 50)

    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, task=args.task, seed=args.seed, output_dir=args.out)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        print(json.dumps({"error": "Invalid configuration", "details": str(e), "status": EXIT_CONFIG}))
        return EXIT_CONFIG

    if cfg.sweep is not None and cfg.sweep.axes():
        results = asyncio.run(run_sweep(cfg, args.threads))
        print(json.dumps([_summary(r) for r in results], indent=2, default=str))
        return max((r["status"] for r in results), default=0)

    result = run_task(cfg)
    print(json.dumps(_summary(result), indent=2, default=str))
    return result["status"]


if __name__ == "__main__":
    sys.exit(main())
