#!/usr/bin/env python3
"""Command-line entry point: ``python scripts/nci_cli.py verify --builtin so21``."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.cli import main  # noqa: E402

if __name__ == "__main__":
    raise SystemExit(main())
