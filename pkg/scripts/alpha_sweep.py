"""Fine sweep of the lead/predecessor weight: certificate versus simulation.

    python3 scripts/alpha_sweep.py [--n-vehicles N] [--out FILE]

For each alpha, prints rho = alpha ||G||_inf, the certified bound when
rho < 1, and the largest ||x_i|| / ||x_1|| measured after a 0.2 m lateral
offset of the lead on a straight road.
"""

import argparse
import csv
from dataclasses import replace

import numpy as np

from platoon_lateral.config import load_config, shipped_config
from platoon_lateral.controller import ControllerConfig
from platoon_lateral.platoon_sim import perturbation_experiment
from platoon_lateral.string_stability import certify


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n-vehicles", type=int, default=6)
    ap.add_argument("--alphas", type=float, nargs="+",
                    default=[0.0, 0.02, 0.04, 0.06, 0.1, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--out", default="alpha_sweep.csv")
    args = ap.parse_args()

    cfg = load_config(shipped_config("default"))
    sc, ss = cfg.scenario, cfg.string_stability
    rows = []
    for a in args.alphas:
        rep = certify(sc.controller.gains, a, sc.vehicle, sc.V0, ss.omegas())
        run = perturbation_experiment(replace(sc, n_vehicles=args.n_vehicles,
                                              controller=ControllerConfig(sc.controller.gains, a)))
        rows.append((a, rep.rho, rep.bound_M_telescoped, run.max_ratio, int(np.argmax(run.ratios)) + 1))
        bound = "-" if rep.bound_M_telescoped is None else f"{rep.bound_M_telescoped:8.3f}"
        print(f"alpha {a:5.2f}  rho {rep.rho:7.3f}  bound {bound:>8}  measured {run.max_ratio:7.3f}"
              f" (vehicle {rows[-1][-1]})")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "rho", "bound", "max_ratio", "argmax_vehicle"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
