#!/usr/bin/env python3
"""Time-refinement ladder on the benchmark: uniform bounds, gap slopes,
self-convergence.  Writes the full report under out/converge."""

import sys
from pathlib import Path

from chemoflow.cli import main

REPO = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    levels = sys.argv[1] if len(sys.argv) > 1 else "4"
    sys.exit(
        main(
            [
                "converge",
                "--config",
                str(REPO / "configs" / "benchmark.json"),
                "--levels",
                levels,
                "--output",
                "out/converge",
                "--set",
                "time.N=16",
            ]
        )
    )
