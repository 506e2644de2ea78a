"""Command-line entry points."""

from .main import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main

__all__ = ["EXIT_DATA", "EXIT_NUMERIC", "EXIT_OK", "EXIT_USAGE", "build_parser", "main"]
