"""End-to-end platoon simulation of a double lane change.

The lead vehicle tracks the nominal path directly. Every vehicle broadcasts
its position every ``trace_interval`` seconds; each follower refits two
line/arc trajectories (from the lead's trace and from its predecessor's trace)
whenever new samples become visible, computes errors against both and applies
the weighted steering law. Vehicle 2 only has the lead's trace, so both error
sets come from the same trajectory.

All vehicles drive at the constant speed V0 and start on the original lane
centreline with zero error, after having driven straight long enough to fill
everyone's preview.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .controller import ControllerConfig, radius_of, feedforward, feedback, command
from .trajectory import (
    FIT_THRESHOLD, L_PREVIEW, R_LINE, R_MIN, Arc, InsufficientPreview, Line, Trajectory,
    errors_from_match, fit_segments, preview_window,
)
from .vehicle_model import (
    IDELTA, ITHETA, IX, IY, IYAW, N_STATES, ActuationParams, Plant, VehicleParams,
)

log = logging.getLogger(__name__)

# typical mid-size sedan; see configs/default.yaml
DEFAULT_VEHICLE = VehicleParams(m_v=1800.0, I_z=3000.0, C_f=90000.0, C_r=90000.0, a=1.2, b=1.65)
MIN_LANE_OFFSET = 1e-3


@dataclass(frozen=True)
class LeadPathSpec:
    """Double lane change; lengths are measured along the road (X)."""

    straight_in: float = 300.0
    change_length: float = 100.0
    lane_offset: float = -3.7
    dwell: float = 200.0
    return_length: float = 100.0
    straight_out: float = 300.0

    def __post_init__(self):
        for name in ("straight_in", "change_length", "dwell", "return_length", "straight_out"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not math.isfinite(self.lane_offset):
            raise ValueError("lane_offset must be finite")
        # arcs are stored by centre, which sits ~L^2/(4h) away; below a millimetre
        # the end points would lose precision, so such offsets are refused
        if 0.0 < abs(self.lane_offset) < MIN_LANE_OFFSET:
            raise ValueError(f"lane_offset must be 0 or at least {MIN_LANE_OFFSET} m in magnitude")

    @property
    def total(self) -> float:
        return self.straight_in + self.change_length + self.dwell + self.return_length + self.straight_out


def s_curve_radius(length: float, offset: float) -> float:
    """Radius of the two equal arcs of an S-curve spanning ``length`` x ``offset``."""
    h = abs(offset)
    return ((length / 2.0) ** 2 + (h / 2.0) ** 2) / h


def _s_curve(x0: float, y0: float, length: float, offset: float) -> tuple[Arc, Arc]:
    R = s_curve_radius(length, offset)
    if R < R_MIN:
        raise ValueError(f"lane change needs radius {R:.3f} m < R_min = {R_MIN} m")
    phi = math.asin((length / 2.0) / R)
    sgn = 1.0 if offset > 0 else -1.0
    # first arc turns toward the new lane, starting heading +X
    first = Arc(x0, y0 + sgn * R, R, -sgn * 0.5 * math.pi, sgn * phi)
    mx, my = first.end
    h = first.heading_at(first.length)
    cx2, cy2 = mx + R * math.sin(h) * sgn, my - R * math.cos(h) * sgn
    second = Arc(cx2, cy2, R, math.atan2(my - cy2, mx - cx2), -sgn * phi)
    return first, second


def build_lead_path(spec: LeadPathSpec) -> Trajectory:
    if spec.lane_offset == 0.0:
        return Trajectory([Line(0.0, 0.0, spec.total, 0.0)])
    segs: list = [Line(0.0, 0.0, spec.straight_in, 0.0)]
    x = spec.straight_in
    a1, a2 = _s_curve(x, 0.0, spec.change_length, spec.lane_offset)
    ex, ey = a2.end
    segs += [a1, a2, Line(ex, ey, ex + spec.dwell, ey)]
    b1, b2 = _s_curve(ex + spec.dwell, ey, spec.return_length, -spec.lane_offset)
    fx, fy = b2.end
    segs += [b1, b2, Line(fx, fy, fx + spec.straight_out, fy)]
    return Trajectory(segs)


@dataclass(frozen=True)
class ScenarioConfig:
    n_vehicles: int = 4
    V0: float = 20.0
    spacing: float = 20.0
    lead_path: LeadPathSpec = field(default_factory=LeadPathSpec)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    vehicle: VehicleParams = DEFAULT_VEHICLE
    actuation: ActuationParams = field(default_factory=ActuationParams)
    trace_interval: float = 0.1
    comm_delay: float = 0.0
    duration: float | None = None
    dt: float = 1e-3
    record_interval: float = 0.01
    L_preview: float = L_PREVIEW
    fit_threshold: float = FIT_THRESHOLD
    r_line: float = R_LINE
    r_min: float = R_MIN
    instantaneous_actuation: bool = False

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ValueError("n_vehicles must be >= 2")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        if not self.V0 > 0:
            raise ValueError("V0 must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not (0 < self.dt <= 0.01):
            raise ValueError("dt must satisfy 0 < dt <= 0.01")
        if self.comm_delay < 0:
            raise ValueError("comm_delay must be >= 0")
        for name in ("trace_interval", "record_interval"):
            ratio = getattr(self, name) / self.dt
            if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-6:
                raise ValueError(f"{name} must be a positive multiple of dt")
        lp = self.lead_path
        if lp.lane_offset != 0.0:
            for name in ("change_length", "return_length"):
                R = s_curve_radius(getattr(lp, name), lp.lane_offset)
                if R < max(self.r_min, R_MIN):
                    raise ValueError(f"lead_path.{name} needs arc radius {R:.3f} m, below r_min")

    @property
    def resolved_duration(self) -> float:
        if self.duration is not None:
            return self.duration
        return (self.lead_path.total + (self.n_vehicles - 1) * self.spacing) / self.V0


class SimEvent(NamedTuple):
    t: float
    vehicle: int
    kind: str
    detail: str


@dataclass
class SimOutput:
    """Recorded series, shape (n_vehicles, n_samples); vehicle index 0 is the lead."""

    t: np.ndarray
    e_lat: np.ndarray
    e_lat_lead: np.ndarray
    e_lat_prec: np.ndarray
    e_nominal: np.ndarray
    delta_c: np.ndarray
    delta_f: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    theta: np.ndarray
    events: list[SimEvent] = field(default_factory=list)

    CSV_COLUMNS = ("t", "e_lat", "delta_c", "delta_f", "X", "Y", "theta")

    @property
    def n_vehicles(self) -> int:
        return self.e_lat.shape[0]

    def max_abs_e_lat(self) -> np.ndarray:
        return np.abs(self.e_lat).max(axis=1)

    def max_abs_delta_c(self) -> np.ndarray:
        return np.abs(self.delta_c).max(axis=1)

    def summary(self) -> dict:
        return {
            "n_vehicles": self.n_vehicles,
            "n_samples": int(len(self.t)),
            "duration": float(self.t[-1]) if len(self.t) else 0.0,
            "max_abs_e_lat": [float(v) for v in self.max_abs_e_lat()],
            "max_abs_delta_c": [float(v) for v in self.max_abs_delta_c()],
            "max_abs_e_nominal": [float(v) for v in np.abs(self.e_nominal).max(axis=1)],
            "events": [e._asdict() for e in self.events],
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for i in range(self.n_vehicles):
            path = out / f"vehicle_{i + 1:02d}.csv"
            cols = (self.t, self.e_lat[i], self.delta_c[i], self.delta_f[i], self.X[i], self.Y[i], self.theta[i])
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(self.CSV_COLUMNS)
                for row in zip(*(c.tolist() for c in cols)):
                    w.writerow([repr(v) for v in row])
            files.append(path)
        path = out / "summary.json"
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        files.append(path)
        return files


class _Trace:
    """Growing buffer of (t, x, y) samples broadcast by one vehicle."""

    def __init__(self, capacity: int):
        self.data = np.empty((capacity, 3))
        self.n = 0

    def append(self, t: float, x: float, y: float) -> None:
        self.data[self.n] = (t, x, y)
        self.n += 1

    def visible(self, t_now: float, delay: float) -> int:
        """Number of samples whose timestamp is not in the receiver's future."""
        return int(np.searchsorted(self.data[: self.n, 0], t_now - delay + 1e-9, side="right"))


class _Follower:
    """Per-follower trajectory state for one source trace."""

    __slots__ = ("traj", "seen")

    def __init__(self):
        self.traj: Trajectory | None = None
        self.seen = -1


def _fallback_line(xy: np.ndarray, ex: float, ey: float) -> Trajectory:
    j = int(np.argmin((xy[:, 0] - ex) ** 2 + (xy[:, 1] - ey) ** 2))
    j = min(j, len(xy) - 2)
    return Trajectory([Line(*xy[j], *xy[j + 1])])


def run_scenario(cfg: ScenarioConfig, lead_offset: tuple[float, float] = (0.0, 0.0),
                 lead_path: Trajectory | None = None) -> SimOutput:
    """Simulate the platoon; ``lead_offset`` perturbs the lead's initial (Y, theta)."""
    N, V0, dt = cfg.n_vehicles, cfg.V0, cfg.dt
    p, ctrl = cfg.vehicle, cfg.controller
    plant = Plant(p, cfg.actuation, V0, cfg.instantaneous_actuation)
    n_steps = int(round(cfg.resolved_duration / dt))
    sample_every = int(round(cfg.trace_interval / dt))
    record_every = int(round(cfg.record_interval / dt))

    nominal = lead_path or build_lead_path(cfg.lead_path)
    runout = cfg.L_preview + N * cfg.spacing + V0 * cfg.trace_interval + 50.0
    tracked = nominal.extended(runout + max(0.0, V0 * cfg.resolved_duration - nominal.length))

    y = np.zeros((N, N_STATES))
    y[:, IX] = -cfg.spacing * np.arange(N)
    y[0, IY] += lead_offset[0]
    y[0, ITHETA] += lead_offset[1]

    step_len = V0 * cfg.trace_interval
    n_hist = int(math.ceil(((N + 1) * cfg.spacing + cfg.L_preview) / step_len)) + 1
    capacity = n_hist + n_steps // sample_every + 2
    traces = [_Trace(capacity) for _ in range(N)]
    for i, tr in enumerate(traces):
        x0 = -cfg.spacing * i
        for k in range(n_hist, 0, -1):
            tr.append(-k * cfg.trace_interval, x0 - k * step_len, 0.0)

    lead_state = [_Follower() for _ in range(N)]
    prec_state = [_Follower() for _ in range(N)]
    events: list[SimEvent] = []
    fit_kw = dict(fit_threshold=cfg.fit_threshold, r_line=cfg.r_line, r_min=cfg.r_min)

    def refresh(state: _Follower, trace: _Trace, ego_x: float, ego_y: float, t: float, vid: int, src: str):
        n_vis = trace.visible(t, cfg.comm_delay)
        if n_vis == state.seen:
            return
        state.seen = n_vis
        pts = trace.data[:n_vis]
        try:
            win = preview_window(pts[:, 1:], (ego_x, ego_y), cfg.L_preview)
            used = pts[win.start:win.stop]
            assert used[-1, 0] <= t - cfg.comm_delay + 1e-9, "trace sample from the future"
            state.traj = fit_segments(win.points, **fit_kw)
        except InsufficientPreview as exc:
            events.append(SimEvent(t, vid, "insufficient-preview", f"{src}: {exc}"))
            log.info("t=%.3f vehicle %d: %s preview lost (%s)", t, vid + 1, src, exc)
            if state.traj is None:
                # nothing to hold yet: follow the chord through the two nearest samples
                state.traj = _fallback_line(pts[:, 1:], ego_x, ego_y)

    n_rec = n_steps // record_every + 1
    rec = {k: np.zeros((N, n_rec)) for k in ("e_lat", "e_lat_lead", "e_lat_prec", "e_nominal",
                                             "delta_c", "delta_f", "X", "Y", "theta")}
    t_rec = np.zeros(n_rec)
    delta_c = np.zeros(N)
    lead_ctrl = replace(ctrl, alpha=0.0)
    alpha = ctrl.alpha
    r_k = 0

    for k in range(n_steps + 1):
        t = k * dt
        rows = y.tolist()
        if k % sample_every == 0:
            for i in range(N):
                traces[i].append(t, rows[i][IX], rows[i][IY])
        recording = k % record_every == 0
        for i in range(N):
            X, Y, th, r = rows[i][IX], rows[i][IY], rows[i][ITHETA], rows[i][IYAW]
            if i == 0:
                m = tracked.match_point(X, Y)
                e_l = e_p = errors_from_match(m, X, Y, th, r, V0)
                c = lead_ctrl
            else:
                refresh(lead_state[i], traces[0], X, Y, t, i, "lead")
                e_l = errors_from_match(lead_state[i].traj.match_point(X, Y), X, Y, th, r, V0)
                if i == 1:
                    e_p = e_l
                else:
                    refresh(prec_state[i], traces[i - 1], X, Y, t, i, "preceding")
                    e_p = errors_from_match(prec_state[i].traj.match_point(X, Y), X, Y, th, r, V0)
                c = ctrl
            ff = feedforward(radius_of(e_l.curvature_at_match), radius_of(e_p.curvature_at_match), c, p, V0)
            delta_c[i] = command(ff, feedback(e_l, e_p, c))
            if recording:
                a = 0.0 if i <= 1 else alpha
                rec["e_lat"][i, r_k] = a * e_p.e_lat + (1.0 - a) * e_l.e_lat
                rec["e_lat_lead"][i, r_k] = e_l.e_lat
                rec["e_lat_prec"][i, r_k] = e_p.e_lat
                mn = tracked.match_point(X, Y)
                rec["e_nominal"][i, r_k] = -(X - mn.x) * math.sin(mn.heading) + (Y - mn.y) * math.cos(mn.heading)
        if recording:
            t_rec[r_k] = t
            rec["delta_c"][:, r_k] = delta_c
            rec["delta_f"][:, r_k] = delta_c if cfg.instantaneous_actuation else y[:, IDELTA]
            rec["X"][:, r_k] = y[:, IX]
            rec["Y"][:, r_k] = y[:, IY]
            rec["theta"][:, r_k] = y[:, ITHETA]
            r_k += 1
        if k == n_steps:
            break
        y = plant.step(y, delta_c.copy(), dt)

    return SimOutput(t=t_rec[:r_k], events=events, **{k: v[:, :r_k] for k, v in rec.items()})


class PerturbationResult(NamedTuple):
    norms: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    output: SimOutput


def state_norms(out: SimOutput, dt: float) -> np.ndarray:
    """Discrete L2 norm over the run of x_i = (lateral offset, heading) from the straight line."""
    return np.sqrt(np.sum(out.Y**2 + out.theta**2, axis=1) * dt)


def perturbation_experiment(cfg: ScenarioConfig, initial_offset: tuple[float, float] = (0.2, 0.0),
                            settle_time: float = 30.0) -> PerturbationResult:
    """Perturb the lead on a straight road and measure ||x_i||_2 / ||x_1||_2."""
    duration = cfg.duration or settle_time + (cfg.n_vehicles - 1) * cfg.spacing / cfg.V0
    length = cfg.V0 * duration + cfg.L_preview + cfg.n_vehicles * cfg.spacing + 100.0
    cfg = replace(cfg, duration=duration)
    path = Trajectory([Line(-1.0, 0.0, length, 0.0)])
    out = run_scenario(cfg, lead_offset=initial_offset, lead_path=path)
    norms = state_norms(out, cfg.record_interval)
    if norms[0] == 0.0:
        ratios = np.zeros_like(norms)
    else:
        ratios = norms / norms[0]
    return PerturbationResult(norms, ratios, float(ratios.max()), out)
