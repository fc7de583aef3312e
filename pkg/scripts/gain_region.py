"""Stabilizing (k_e, k_theta) region at a few k_omega slices, all shipped speeds.

    python3 scripts/gain_region.py [--config PATH] [--out DIR]
"""

import argparse

from platoon_lateral.cli import main as cli
from platoon_lateral.config import shipped_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=str(shipped_config("default")))
    ap.add_argument("--out", default="out/gain_region")
    args = ap.parse_args()
    argv = ["stability-region", args.config, "--out", args.out, "--per-speed"]
    for k in (0.0, 0.08, 0.2, 0.4):
        argv += ["--k-omega", str(k)]
    raise SystemExit(cli(argv))


if __name__ == "__main__":
    main()
