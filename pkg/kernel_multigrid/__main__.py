"""Start the mgm command."""

import sys

from .cli import run_cli


def main() -> None:
    """Run the command line interface and exit with its code."""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
