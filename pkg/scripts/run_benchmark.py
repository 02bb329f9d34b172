#!/usr/bin/env python3
"""Run the shipped benchmark trajectory and print the energy-check summary."""

import sys
from pathlib import Path

from chemoflow.cli import main

REPO = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    config = str(REPO / "configs" / "benchmark.json")
    out = sys.argv[1] if len(sys.argv) > 1 else "out/benchmark"
    code = main(["run", "--config", config, "--output", out])
    if code == 0:
        code = main(
            ["energy", "--config", config, "--checkpoints", f"{out}/checkpoints", "--output", out]
        )
    sys.exit(code)
