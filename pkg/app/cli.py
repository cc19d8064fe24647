"""Command-line entry point for running experiments."""

import argparse
import logging
import sys
from typing import List, Optional

from app.config import ConfigValidationError, load_settings, parse_config
from core.harness import ExperimentRunner
from core.models import DomainError, ResourceLimitError
from core.store import ResultStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_RESOURCE = 3

COMMANDS = {
    "dynamics": "dynamics",
    "filter-sweep": "filter_sweep",
    "memory-sweep": "memory_sweep",
    "mask-search": "mask_search",
    "mask-budget": "mask_budget",
    "convergence": "convergence",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quapi", description="Path-integral dynamics of a two-level system in one or two baths")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, kind in COMMANDS.items():
        sub = subparsers.add_parser(command, help=f"run a {kind.replace('_', ' ')} experiment")
        sub.add_argument("--config", required=True, help="experiment YAML file")
        sub.add_argument("--out", default=None, help="output directory (overrides config and QUAPI_OUTPUT_DIR)")
        sub.add_argument("--workers", type=int, default=None, help="worker threads for path spawning")
        sub.add_argument("--log-level", default=None, help="logging level (default from QUAPI_LOG_LEVEL or INFO)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    logging.basicConfig(level=(args.log_level or settings['LOG_LEVEL']).upper())

    try:
        config = parse_config(
            args.config,
            overrides={"output_dir": args.out, "workers": args.workers},
            kind=COMMANDS[args.command],
        )
        runner = ExperimentRunner(ResultStore(config.output_dir))
        outcome = runner.run(config)
    except ConfigValidationError as exc:
        for issue in exc.errors:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_INVALID
    except DomainError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except Exception:
        logger.exception("Experiment failed")
        return EXIT_FAILURE

    logger.info(f"Run {outcome['id']} wrote {len(outcome['files'])} files in {outcome['duration_ms']} ms")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
