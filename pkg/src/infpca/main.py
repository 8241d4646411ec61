import os
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError

from infpca.cli import build_parser, resolve_config, run_command
from infpca.core.errors import DataValidationError, InfpcaError

load_dotenv()


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), colorize=True)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; 0 when every artifact was written, 1 otherwise."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or os.getenv("INFPCA_LOG_LEVEL", "INFO"))

    try:
        config = resolve_config(args)
        written = run_command(config, args)
    except DataValidationError as e:
        logger.error("Invalid input:" if e.violations else f"Invalid input: {e}")
        for violation in e.violations:
            logger.error(f"  {violation}")
        return 1
    except (InfpcaError, ValidationError, ValueError, OSError, np.linalg.LinAlgError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1

    logger.info(f"{args.command}: wrote {len(written)} artifact(s) to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
