#!/usr/bin/env python3
"""
rbspde-lab - Main Entry Point
Reflected backward SPDE solver and verification lab
"""

import sys
from pathlib import Path

LAB_DIR = Path(__file__).resolve().parent / "rbspde-lab"
sys.path.insert(0, str(LAB_DIR))

from src.harness.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
