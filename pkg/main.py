"""
Main entry point for the parallel recurrent ELM engine.

This module wraps the command-line front end so `python main.py bench --plan ...`
behaves like the installed `relm` script.
"""

import sys

from app.cli import main as cli_main
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)


def main() -> int:
    code = cli_main(sys.argv[1:])
    if code != 0:
        logger.error(f"relm exited with code {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
