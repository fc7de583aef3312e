"""Command line entry point.

    platoon-lateral simulate CONFIG [--out DIR] [--dry-run]
    platoon-lateral stability-region CONFIG [--k-omega K ...] [--per-speed] [--out DIR]
    platoon-lateral string-stability CONFIG [--alpha A ...] [--out DIR]
    platoon-lateral fit-trajectory TRACE_CSV [--vehicle-id ID] [--fit-threshold M] [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
Every command writes manifest.json next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .platoon_sim import run_scenario
from .stability import is_hurwitz, char_poly, stabilizing_set, write_region_csv
from .string_stability import (
    REPORT_SCHEMA, certify, frequency_response, sigma_max_2x2, write_response_csv,
)
from .svg import Figure, edges
from .trajectory import (
    FIT_THRESHOLD, R_LINE, R_MIN, InsufficientPreview, fit_segments, max_residual, read_trace_csv,
)

log = logging.getLogger("platoon_lateral")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Bad input that is not a config file problem; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    config_hash: str | None
    version: str = __version__
    files: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.files = sorted(set(self.files) | {path.name})
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(args, cfg: RunConfig | None, default: str) -> Path:
    d = Path(args.out) if args.out else Path(cfg.output_dir if cfg else "out") / default
    d.mkdir(parents=True, exist_ok=True)
    return d


def _rel(paths, out: Path) -> list[str]:
    return [str(Path(p).relative_to(out)) for p in paths]


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.dry_run:
        sys.stdout.write(yaml.safe_dump(cfg.resolved(), sort_keys=False))
        return EXIT_OK
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sim = run_scenario(cfg.scenario)
    files = sim.write(out)
    for name, series, ylabel in (("e_lat.svg", sim.e_lat, "lateral error (m)"),
                                 ("delta_c.svg", sim.delta_c, "steering command (rad)")):
        fig = Figure(title=f"{sim.n_vehicles}-vehicle platoon", xlabel="time (s)", ylabel=ylabel)
        for i in range(sim.n_vehicles):
            fig.line(sim.t, series[i], label=f"vehicle {i + 1}", width=1.0)
        files.append(fig.save(out / name))
    manifest = RunManifest("simulate", cfg.config_hash(), files=_rel(files, out),
                           wall_time=time.perf_counter() - t0)
    manifest.write(out)
    for i, (e, d) in enumerate(zip(sim.max_abs_e_lat(), sim.max_abs_delta_c())):
        print(f"vehicle {i + 1:2d}: max|e_lat| = {e:.4f} m  max|delta_c| = {d:.5f} rad")
    print(f"wrote {len(manifest.files)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stability-region


def _slice_indices(k_omega_axis: np.ndarray, requested, default: float) -> list[int]:
    values = requested if requested else [default]
    idx = []
    for v in values:
        i = int(np.argmin(np.abs(k_omega_axis - v)))
        if abs(k_omega_axis[i] - v) > 1e-9:
            if requested:
                raise UsageError(f"k_omega = {v} is not a grid node; available: "
                                 f"{', '.join(f'{k:g}' for k in k_omega_axis)}")
            # configured gain off the grid: show the nearest slice
        idx.append(i)
    return sorted(set(idx))


def cmd_stability_region(args) -> int:
    cfg = load_config(args.config)
    st = cfg.stability
    if not st.speeds:
        raise ConfigError("stability.speeds must list at least one speed", args.config)
    out = _out_dir(args, cfg, "stability_region")
    sc = cfg.scenario
    t0 = time.perf_counter()
    sset = stabilizing_set(sc.vehicle, sc.actuation, st.speeds, st.grid, st.margin)
    inter = sset.intersection
    K = sc.controller.gains
    slices = _slice_indices(inter.k_omega, args.k_omega, K.k_omega)

    def sliced(reg):
        return type(reg)(reg.k_e, reg.k_theta, reg.k_omega[slices], reg.stable[:, :, slices], reg.V0, reg.speeds)

    regions = [sliced(inter)] + ([sliced(r) for r in sset.per_speed] if args.per_speed else [])
    files = [out / "region.csv"]
    write_region_csv(files[0], regions)

    for k in slices:
        fig = Figure(title=f"stabilizing gains, k_omega = {inter.k_omega[k]:g}",
                     xlabel="k_e", ylabel="k_theta")
        fig.cells(edges(inter.k_e), edges(inter.k_theta), inter.stable[:, :, k], label="all speeds")
        fig.points([K.k_e], [K.k_theta], label="configured gains", color="#d62728", r=3)
        files.append(fig.save(out / f"region_kw_{inter.k_omega[k]:g}.svg"))

    direct = [is_hurwitz(char_poly(K, sc.vehicle, sc.actuation, v), st.margin) for v in st.speeds]
    try:
        on_grid = inter.contains(K)
    except KeyError:
        on_grid = None
    summary = {
        "speeds": list(st.speeds),
        "gains": list(K),
        "gains_on_grid_and_stable": on_grid,
        "intersection_fraction_stable": inter.fraction_stable,
        "per_speed": [{"V0": r.V0, "gains_hurwitz": ok, "fraction_stable": r.fraction_stable}
                      for r, ok in zip(sset.per_speed, direct)],
        "k_omega_slices": [float(inter.k_omega[k]) for k in slices],
    }
    files.append(out / "region_summary.json")
    files[-1].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    RunManifest("stability-region", cfg.config_hash(), files=_rel(files, out),
                wall_time=time.perf_counter() - t0).write(out)
    verdict = "inside" if all(direct) else "outside"
    print(f"configured gains {tuple(K)} are {verdict} the stabilizing set at all {len(st.speeds)} speeds")
    print(f"intersection covers {100 * inter.fraction_stable:.1f}% of the grid; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# string-stability


def cmd_string_stability(args) -> int:
    cfg = load_config(args.config)
    ss = cfg.string_stability
    alphas = args.alpha if args.alpha else list(ss.alphas)
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise UsageError(f"alpha must lie in [0, 1], got {a}")
    out = _out_dir(args, cfg, "string_stability")
    sc = cfg.scenario
    K = sc.controller.gains
    w = ss.omegas()
    t0 = time.perf_counter()
    reports = [certify(K, a, sc.vehicle, ss.V0, w) for a in alphas]
    docs = [r.to_dict() for r in reports]
    for d in docs:
        jsonschema.validate(d, REPORT_SCHEMA)

    files = [out / "report.json", out / "report.csv", out / "response.csv", out / "magnitude.svg"]
    files[0].write_text(json.dumps(docs, indent=2, sort_keys=True) + "\n")
    with open(files[1], "w") as fh:
        fh.write("alpha,rho,bound_M,bound_M_telescoped,peak_omega,verdict\n")
        for r in reports:
            cells = [r.alpha, r.rho, r.bound_M, r.bound_M_telescoped, r.peak_omega]
            fh.write(",".join("" if c is None else repr(float(c)) for c in cells) + f",{r.verdict}\n")
    G = frequency_response(w, K, sc.vehicle, ss.V0).G
    sig = sigma_max_2x2(G)
    write_response_csv(files[2], w, sig)
    fig = Figure(title=f"largest singular value, V0 = {ss.V0:g} m/s", xlabel="omega (rad/s)",
                 ylabel="sigma_max", logx=True)
    fig.line(w, sig, label="G")
    fig.line(w, sigma_max_2x2(G - np.eye(2)), label="G - I")
    fig.line(w, np.ones_like(w), label="1", color="#7f7f7f", width=0.8)
    fig.save(files[3])
    RunManifest("string-stability", cfg.config_hash(), files=_rel(files, out),
                wall_time=time.perf_counter() - t0).write(out)
    for r in reports:
        m = "-" if r.bound_M is None else f"{r.bound_M:.4g}"
        print(f"alpha = {r.alpha:<5g} rho = {r.rho:.4g}  M = {m}  peak at {r.peak_omega:.3g} rad/s  {r.verdict}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-trajectory


def cmd_fit_trajectory(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise UsageError(f"trace file not found: {path}")
    try:
        traces = read_trace_csv(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not traces:
        raise UsageError(f"{path}: no trace rows")
    vid = args.vehicle_id if args.vehicle_id is not None else min(traces)
    if vid not in traces:
        raise UsageError(f"{path}: no rows for vehicle {vid}; present: {sorted(traces)}")
    pts = np.array([(p.x, p.y) for p in traces[vid]])
    out = Path(args.out) if args.out else Path("out") / "fit_trajectory"
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        traj = fit_segments(pts, args.fit_threshold, args.r_line, args.r_min)
    except InsufficientPreview as exc:
        raise UsageError(f"{path}: {exc}") from None
    resid = max_residual(traj, pts)
    doc = {"vehicle_id": vid, "n_points": int(len(pts)), "max_residual": resid,
           "fit_threshold": args.fit_threshold, **traj.to_dict()}
    files = [out / "segments.json", out / "overlay.svg"]
    files[0].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    fig = Figure(title=f"vehicle {vid}: {len(traj)} segments", xlabel="x (m)", ylabel="y (m)",
                 equal_aspect=args.equal_aspect)
    fig.points(pts[:, 0], pts[:, 1], label="samples", color="#7f7f7f")
    for n, seg in enumerate(traj.segments):
        s = np.linspace(0.0, seg.length, 50)
        xy = np.array([seg.point_at(v) for v in s])
        fig.line(xy[:, 0], xy[:, 1], label=type(seg).__name__.lower() if n < 8 else None)
    fig.save(files[1])
    RunManifest("fit-trajectory", None, files=_rel(files, out), wall_time=time.perf_counter() - t0).write(out)
    print(f"{len(traj)} segments, max residual {resid:.4g} m; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="platoon-lateral", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the platoon lane-change scenario")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stability-region", help="stabilizing gain sets over the speed envelope")
    p.add_argument("config")
    p.add_argument("--k-omega", type=float, action="append",
                   help="k_omega slice to export (repeatable; default: the configured gain)")
    p.add_argument("--per-speed", action="store_true", help="also write each speed's region to the CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability_region)

    p = sub.add_parser("string-stability", help="H-infinity string stability certificate")
    p.add_argument("config")
    p.add_argument("--alpha", type=float, action="append", help="weight to evaluate (repeatable)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_string_stability)

    p = sub.add_parser("fit-trajectory", help="fit lines and arcs to a position trace")
    p.add_argument("trace", help="CSV with columns vehicle_id,t,x,y")
    p.add_argument("--vehicle-id", type=int)
    p.add_argument("--fit-threshold", type=float, default=FIT_THRESHOLD)
    p.add_argument("--r-line", type=float, default=R_LINE)
    p.add_argument("--r-min", type=float, default=R_MIN)
    p.add_argument("--equal-aspect", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_trajectory)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
