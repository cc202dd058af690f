#!/usr/bin/env python3
"""
Drowsiness classification pipeline - command-line entry point.

Usage:
    python main.py run-all --workdir work
    python main.py train conv2d-raw --smote
"""

import sys
from pathlib import Path

from dotenv import load_dotenv

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from drowsinet.cli import main

# Load environment variables
load_dotenv()

if __name__ == "__main__":
    sys.exit(main())
