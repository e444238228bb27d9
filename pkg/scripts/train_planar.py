#!/usr/bin/env python3
"""Train and certify the planar benchmark, then verify and simulate."""

import sys
from pathlib import Path

from contracert.cli import main

ROOT = Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "planar.toml"
OUT = ROOT / "runs" / "planar"


if __name__ == "__main__":
    code = main(["train", "--config", str(CONFIG), "--out", str(OUT)])
    if code != 0:
        sys.exit(code)
    code = main(["verify", "--ckpt", str(OUT / "checkpoint.json"), "--config", str(CONFIG)])
    if code != 0:
        sys.exit(code)
    code = main(
        [
            "simulate",
            "--ckpt", str(OUT / "checkpoint.json"),
            "--shape", "hover",
            "--duration", "10.0",
            "--starts", "10",
            "--out", str(OUT / "simulation"),
        ]
    )
    if code != 0:
        sys.exit(code)
    sys.exit(main(["export-plots", "--run", str(OUT / "simulation")]))
