"""Command-line harness: datasets, experiments and the ``inverse-obstacle`` entry point."""

from .main import main

__all__ = ["main"]
