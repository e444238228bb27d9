#!/usr/bin/env python3
"""Train the quadrotor: scaled acceptance run by default, --full for the
stage-100 stretch configuration."""

import sys
from pathlib import Path

from contracert.cli import main

ROOT = Path(__file__).resolve().parent.parent


if __name__ == "__main__":
    full = "--full" in sys.argv[1:]
    name = "quadrotor_full" if full else "quadrotor_scaled"
    config = ROOT / "configs" / f"{name}.toml"
    out = ROOT / "runs" / name
    code = main(["train", "--config", str(config), "--out", str(out)])
    if code != 0:
        sys.exit(code)
    sys.exit(main(["verify", "--ckpt", str(out / "checkpoint.json"), "--config", str(config)]))
