#!/usr/bin/env python3
"""Closed-loop tracking simulations for a trained quadrotor checkpoint.

Usage: simulate_tracking.py <checkpoint.json> [shape ...]
Shapes default to all four reference families.
"""

import sys
from pathlib import Path

from contracert.cli import main

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(2)
    ckpt = Path(sys.argv[1])
    shapes = sys.argv[2:] or ["hover", "figure_eight", "helix", "trefoil"]
    for shape in shapes:
        out = ckpt.parent / "simulation" / shape
        code = main(
            [
                "simulate",
                "--ckpt", str(ckpt),
                "--shape", shape,
                "--duration", "15.0",
                "--starts", "10",
                "--start-scale", "0.3",
                "--out", str(out),
            ]
        )
        if code != 0:
            sys.exit(code)
        code = main(["export-plots", "--run", str(out)])
        if code != 0:
            sys.exit(code)
    sys.exit(0)
