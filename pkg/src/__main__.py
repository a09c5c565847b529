"""Main entry point for the fractal-energy CLI.

Enables running the package as a module:
    python -m src <command>
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
