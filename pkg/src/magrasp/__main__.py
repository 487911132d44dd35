"""Entry point for `python -m magrasp`."""

import sys

from magrasp.cli import main

if __name__ == "__main__":
    sys.exit(main())
