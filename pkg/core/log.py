"""Console and logging setup (rich)."""

from __future__ import annotations

import logging
import os

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

load_dotenv()

console = Console(stderr=True)

_configured = False


def get_logger(name: str) -> logging.Logger:
    """Return a logger routed through the shared rich console.

    The level comes from CORRGARMENT_LOG_LEVEL (default WARNING).
    """
    global _configured
    if not _configured:
        level = os.getenv("CORRGARMENT_LOG_LEVEL", "WARNING").upper()
        root = logging.getLogger("corrgarment")
        root.setLevel(level)
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    return logging.getLogger(f"corrgarment.{name}")
