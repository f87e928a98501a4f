"""
Network compiler - main entry point.
Trains binarized quantum neural networks, compiles them to circuits and reports gate counts.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

# Add the current directory to Python path for imports
sys.path.insert(0, str(Path(__file__).parent))

from core.config import Config
from core.errors import ModelFormatError, QNetError, UsageError
from core.launcher import CommandLauncher
from ui.cli import apply_overrides, parse_args
from ui.renderer import TextRenderer

logger = logging.getLogger("qnet")


def configure_logging(config: Config, verbose: bool = False, quiet: bool = False):
    level = config.get('logging.level', 'INFO')
    if verbose:
        level = 'DEBUG'
    elif quiet:
        level = 'WARNING'
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format=config.get('logging.format'), stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    try:
        args = parse_args(argv)
        config = Config(args.config_dir)
        apply_overrides(config, args)
        configure_logging(config, args.verbose, args.quiet)

        launcher = CommandLauncher(config, TextRenderer(quiet=args.quiet))
        return launcher.run(args)

    except (UsageError, ModelFormatError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except QNetError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
