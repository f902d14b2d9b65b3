"""Recompute the BIS column of the published results table from its accuracy and bandwidth columns."""
import sys
from pathlib import Path

from collab_handshake.cli import main

DEFAULT = Path(__file__).resolve().parent.parent / "tests" / "data" / "table1.csv"

if __name__ == "__main__":
    args = sys.argv[1:] or [str(DEFAULT)]
    sys.exit(main(["bis-table", *args]))
