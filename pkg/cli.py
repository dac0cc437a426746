import argparse
import importlib
import os
import sys
from typing import Callable, Dict, List, Optional

from config import get_logger
from core.sdp import SolverError
from utils.sweep_config import ComputeError, ConfigError

logger = get_logger()

COMMANDS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "commands")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3


def load_commands(subparsers: argparse._SubParsersAction) -> List[str]:
    """
    Loads every command module from the 'commands' directory. Each module
    registers its subparser in `setup(subparsers)`.
    """
    loaded = []
    for filename in sorted(os.listdir(COMMANDS_DIR)):
        if filename.endswith(".py") and not filename.startswith("_"):
            name = filename[:-3]
            try:
                module = importlib.import_module(f"commands.{name}")
                module.setup(subparsers)
                loaded.append(name)
                logger.debug(f"Loaded command module: {filename}")
            except Exception:
                logger.error(f"Failed to load command module {filename}", exc_info=True)
    return loaded


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicka", description="Heralded DI conference-key rate laboratory.")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    load_commands(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    handler: Callable[[argparse.Namespace], Dict] = args.handler
    logger.info(f"Invoking command '{args.command}' with {sorted((k, v) for k, v in vars(args).items() if k != 'handler' and v is not None)}")
    try:
        handler(args)
    except ConfigError as e:
        logger.error(f"Command '{args.command}' rejected its configuration: {e}")
        return EXIT_CONFIG
    except (SolverError, ComputeError, ValueError, OSError) as e:
        logger.error(f"Command '{args.command}' failed: {e}", exc_info=True)
        return EXIT_COMPUTE
    logger.info(f"Successfully executed '{args.command}'.")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
