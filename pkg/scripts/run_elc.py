"""Run the shipped four- and ten-vehicle double lane changes and compare them.

    python3 scripts/run_elc.py [--out DIR]

Writes each run through the regular ``simulate`` command, then prints the
per-follower peaks side by side.
"""

import argparse
import json
from pathlib import Path

from platoon_lateral.cli import main as cli
from platoon_lateral.config import shipped_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="out/elc")
    args = ap.parse_args()
    summaries = {}
    for name in ("elc_4acv", "elc_10acv"):
        out = Path(args.out) / name
        if cli(["simulate", str(shipped_config(name)), "--out", str(out)]) != 0:
            raise SystemExit(f"{name} failed")
        summaries[name] = json.loads((out / "summary.json").read_text())

    print("\nvehicle  max|e_lat| 4 / 10 (cm)   max|delta_c| 4 / 10 (mrad)")
    four, ten = summaries["elc_4acv"], summaries["elc_10acv"]
    for i in range(ten["n_vehicles"]):
        e4 = f"{100 * four['max_abs_e_lat'][i]:6.2f}" if i < four["n_vehicles"] else "     -"
        d4 = f"{1e3 * four['max_abs_delta_c'][i]:6.3f}" if i < four["n_vehicles"] else "     -"
        print(f"{i + 1:7d}  {e4} / {100 * ten['max_abs_e_lat'][i]:6.2f}"
              f"          {d4} / {1e3 * ten['max_abs_delta_c'][i]:6.3f}")


if __name__ == "__main__":
    main()
