#!/usr/bin/env python3
"""
Main entry point for spde-lab
"""

import os
import sys

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from spde_lab.cli import app


if __name__ == "__main__":
    app(prog_name="spde-lab")
