"""Line/arc spline trajectories built from communicated position samples.

Points are grown greedily into segments: at each step a total-least-squares
line and an algebraic (Kasa) circle are fitted, and the segment keeps growing
while the better of the two stays within ``fit_threshold`` (max perpendicular
residual). Junctions are then slid to the position that minimises the summed
squared residual of the two neighbouring fits, and arcs get one Gauss-Newton
geometric refinement when they are closed.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .vehicle_model import GlobalPose

log = logging.getLogger(__name__)

FIT_THRESHOLD = 0.02
R_LINE = 10_000.0
R_MIN = 5.0
L_PREVIEW = 30.0
MIN_FIT_POINTS = 3
JUNCTION_SEARCH = 50
REFINE_PASSES = 4

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


class TracePoint(NamedTuple):
    x: float
    y: float
    timestamp: float
    source_vehicle_id: int


class InsufficientPreview(Exception):
    """Raised when a preview window holds too few samples to fit."""


@dataclass(frozen=True)
class Line:
    x0: float
    y0: float
    x1: float
    y1: float

    kind = "line"
    curvature = 0.0

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    @property
    def start(self) -> tuple[float, float]:
        return (self.x0, self.y0)

    @property
    def end(self) -> tuple[float, float]:
        return (self.x1, self.y1)

    @property
    def direction(self) -> tuple[float, float]:
        n = self.length
        return ((self.x1 - self.x0) / n, (self.y1 - self.y0) / n)

    @property
    def radius(self) -> float:
        return math.inf

    def heading_at(self, s: float) -> float:
        return math.atan2(self.y1 - self.y0, self.x1 - self.x0)

    def point_at(self, s: float) -> tuple[float, float]:
        ux, uy = self.direction
        return (self.x0 + s * ux, self.y0 + s * uy)

    def project(self, px: float, py: float) -> tuple[float, float, float, float]:
        """(arclength, x, y, distance) of the closest point on the segment."""
        dx, dy = self.x1 - self.x0, self.y1 - self.y0
        L2 = dx * dx + dy * dy
        t = ((px - self.x0) * dx + (py - self.y0) * dy) / L2
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        qx, qy = self.x0 + t * dx, self.y0 + t * dy
        return t * math.sqrt(L2), qx, qy, math.hypot(px - qx, py - qy)

    def to_dict(self) -> dict:
        return {"kind": "line", "start": list(self.start), "end": list(self.end),
                "direction": list(self.direction), "length": self.length}


@dataclass(frozen=True)
class Arc:
    """Circular arc; ``sweep`` is signed (positive = counter-clockwise = left turn)."""

    cx: float
    cy: float
    radius: float
    phi0: float
    sweep: float

    kind = "arc"

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)

    @property
    def orientation(self) -> str:
        return "left" if self.sweep > 0 else "right"

    @property
    def curvature(self) -> float:
        return math.copysign(1.0 / self.radius, self.sweep)

    @property
    def start(self) -> tuple[float, float]:
        return self._at_angle(self.phi0)

    @property
    def end(self) -> tuple[float, float]:
        return self._at_angle(self.phi0 + self.sweep)

    def _at_angle(self, phi: float) -> tuple[float, float]:
        return (self.cx + self.radius * math.cos(phi), self.cy + self.radius * math.sin(phi))

    def point_at(self, s: float) -> tuple[float, float]:
        return self._at_angle(self.phi0 + math.copysign(s / self.radius, self.sweep))

    def heading_at(self, s: float) -> float:
        sgn = 1.0 if self.sweep > 0 else -1.0
        return self.phi0 + sgn * s / self.radius + sgn * 0.5 * math.pi

    def project(self, px: float, py: float) -> tuple[float, float, float, float]:
        dx, dy = px - self.cx, py - self.cy
        r = math.hypot(dx, dy)
        span = abs(self.sweep)
        if r < 1e-12:
            # every point of the arc is equidistant; take the earliest
            sx, sy = self.start
            return 0.0, sx, sy, self.radius
        sgn = 1.0 if self.sweep > 0 else -1.0
        rel = wrap_angle(sgn * (math.atan2(dy, dx) - self.phi0))
        if 0.0 <= rel <= span:
            s = rel * self.radius
            qx, qy = self.cx + self.radius * dx / r, self.cy + self.radius * dy / r
            return s, qx, qy, abs(r - self.radius)
        sx, sy = self.start
        ex, ey = self.end
        d0 = math.hypot(px - sx, py - sy)
        d1 = math.hypot(px - ex, py - ey)
        if d0 <= d1:
            return 0.0, sx, sy, d0
        return self.length, ex, ey, d1

    def to_dict(self) -> dict:
        return {"kind": "arc", "start": list(self.start), "end": list(self.end),
                "center": [self.cx, self.cy], "radius": self.radius,
                "orientation": self.orientation, "sweep": self.sweep, "length": self.length}


Segment = Line | Arc


class Match(NamedTuple):
    x: float
    y: float
    heading: float
    curvature: float
    index: int
    distance: float
    s: float


class ErrorSignals(NamedTuple):
    e_lat: float
    theta_err: float
    theta_err_dot: float
    curvature_at_match: float


ZERO_ERRORS = ErrorSignals(0.0, 0.0, 0.0, 0.0)


class Trajectory:
    """Immutable chain of Line/Arc segments."""

    __slots__ = ("segments", "length", "_offsets")

    def __init__(self, segments: Iterable[Segment]):
        segs = tuple(segments)
        if not segs:
            raise ValueError("trajectory needs at least one segment")
        offsets = [0.0]
        for seg in segs:
            offsets.append(offsets[-1] + seg.length)
        self.segments = segs
        self.length = offsets[-1]
        self._offsets = tuple(offsets)

    def __len__(self) -> int:
        return len(self.segments)

    def __repr__(self) -> str:
        kinds = "".join("L" if s.kind == "line" else "A" for s in self.segments)
        return f"Trajectory({kinds}, length={self.length:.3f})"

    def segment_start(self, index: int) -> float:
        return self._offsets[index]

    def match_point(self, x: float, y: float) -> Match:
        """Closest point over all segments; ties go to the lowest segment index."""
        best = None
        best_d = math.inf
        for i, seg in enumerate(self.segments):
            proj = seg.project(x, y)
            if proj[3] < best_d:
                best_d = proj[3]
                best = (i, proj)
        i, (s, qx, qy, d) = best
        seg = self.segments[i]
        return Match(qx, qy, seg.heading_at(s), seg.curvature, i, d, self._offsets[i] + s)

    def point_at(self, s: float) -> tuple[float, float]:
        i = self._locate(s)
        return self.segments[i].point_at(s - self._offsets[i])

    def heading_at(self, s: float) -> float:
        i = self._locate(s)
        return self.segments[i].heading_at(s - self._offsets[i])

    def curvature_at(self, s: float) -> float:
        return self.segments[self._locate(s)].curvature

    def _locate(self, s: float) -> int:
        i = int(np.searchsorted(self._offsets, s, side="right")) - 1
        return min(max(i, 0), len(self.segments) - 1)

    def sample(self, ds: float) -> np.ndarray:
        """Points every ``ds`` of arclength, end point included."""
        n = max(int(math.floor(self.length / ds + 1e-9)), 1)
        s = np.arange(n + 1) * ds
        pts = [self.point_at(v) for v in s]
        if self.length - s[-1] > 1e-9:
            pts.append(self.segments[-1].end)
        return np.asarray(pts)

    def extended(self, extra: float) -> "Trajectory":
        """Append a straight run-out of length ``extra`` along the final tangent."""
        last = self.segments[-1]
        h = last.heading_at(last.length)
        ex, ey = last.end
        return Trajectory((*self.segments, Line(ex, ey, ex + extra * math.cos(h), ey + extra * math.sin(h))))

    def to_dict(self) -> dict:
        return {"length": self.length, "segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        segs = []
        for d in data["segments"]:
            if d["kind"] == "line":
                segs.append(Line(*d["start"], *d["end"]))
            else:
                cx, cy = d["center"]
                sx, sy = d["start"]
                segs.append(Arc(cx, cy, d["radius"], math.atan2(sy - cy, sx - cx), d["sweep"]))
        return cls(segs)


def compute_errors(traj: Trajectory, pose: GlobalPose, V0: float) -> ErrorSignals:
    m = traj.match_point(pose.X, pose.Y)
    return errors_from_match(m, pose.X, pose.Y, pose.theta, pose.yaw_rate, V0)


def errors_from_match(m: Match, x: float, y: float, theta: float, yaw_rate: float, V0: float) -> ErrorSignals:
    # lateral offset measured along the left normal of the matched tangent
    e_lat = -(x - m.x) * math.sin(m.heading) + (y - m.y) * math.cos(m.heading)
    return ErrorSignals(
        e_lat,
        wrap_angle(theta - m.heading),
        yaw_rate - m.curvature * V0,
        m.curvature,
    )


# ---------------------------------------------------------------------------
# preview window


class PreviewWindow(NamedTuple):
    points: np.ndarray
    start: int
    stop: int
    truncated: bool


def _as_xy(trace) -> np.ndarray:
    if isinstance(trace, np.ndarray):
        xy = trace[:, :2]
    else:
        xy = np.array([(p.x, p.y) for p in trace], dtype=float).reshape(-1, 2)
    return xy


def preview_window(trace, ego: Sequence[float], L_preview: float = L_PREVIEW,
                   min_points: int = MIN_FIT_POINTS) -> PreviewWindow:
    """Contiguous sub-trace starting at the sample nearest ``ego``.

    The window extends ``L_preview`` of cumulative chord length ahead. If the
    ego projects behind the nearest sample the previous sample is included too,
    so the fitted trajectory covers the ego's own position.
    """
    if L_preview <= 0:
        raise ValueError("L_preview must be > 0")
    xy = _as_xy(trace)
    n = len(xy)
    if n == 0:
        raise ValueError("empty trace")
    ex, ey = float(ego[0]), float(ego[1])
    d2 = (xy[:, 0] - ex) ** 2 + (xy[:, 1] - ey) ** 2
    start = int(np.argmin(d2))
    if start > 0:
        tx, ty = xy[start] - xy[start - 1]
        if (ex - xy[start, 0]) * tx + (ey - xy[start, 1]) * ty < 0.0:
            start -= 1
    chord = np.hypot(np.diff(xy[start:, 0]), np.diff(xy[start:, 1]))
    cum = np.concatenate(([0.0], np.cumsum(chord)))
    count = int(np.searchsorted(cum, L_preview * (1.0 + 1e-9), side="right"))
    truncated = cum[-1] < L_preview * (1.0 - 1e-9)
    stop = start + count
    if count < min_points:
        raise InsufficientPreview(f"only {count} samples within preview (need {min_points})")
    return PreviewWindow(xy[start:stop], start, stop, truncated)


# ---------------------------------------------------------------------------
# primitive fits


class LineFit(NamedTuple):
    cx: float
    cy: float
    ux: float
    uy: float
    max_res: float
    sse: float


class CircleFit(NamedTuple):
    cx: float
    cy: float
    radius: float
    max_res: float
    sse: float


def fit_line(pts: np.ndarray) -> LineFit:
    """Total-least-squares line, direction oriented first -> last point."""
    c = pts.mean(axis=0)
    d = pts - c
    sxx, syy, sxy = d[:, 0] @ d[:, 0], d[:, 1] @ d[:, 1], d[:, 0] @ d[:, 1]
    ang = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    ux, uy = math.cos(ang), math.sin(ang)
    tx, ty = pts[-1] - pts[0]
    if ux * tx + uy * ty < 0:
        ux, uy = -ux, -uy
    res = np.abs(-d[:, 0] * uy + d[:, 1] * ux)
    return LineFit(float(c[0]), float(c[1]), ux, uy, float(res.max()), float(res @ res))


def fit_circle_kasa(pts: np.ndarray) -> CircleFit | None:
    """Algebraic circle fit in centred coordinates; None when degenerate."""
    if len(pts) < 3:
        return None
    c = pts.mean(axis=0)
    d = pts - c
    scale = float(np.abs(d).max())
    if scale == 0.0:
        return None
    u = d / scale
    A = np.column_stack((u[:, 0], u[:, 1], np.ones(len(u))))
    rhs = -(u[:, 0] ** 2 + u[:, 1] ** 2)
    sol, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < 3 or sv[-1] < 1e-12 * sv[0]:
        return None
    a, b, f = sol
    ux, uy = -0.5 * a, -0.5 * b
    r2 = ux * ux + uy * uy - f
    if not r2 > 0 or not math.isfinite(r2):
        return None
    cx, cy, r = c[0] + ux * scale, c[1] + uy * scale, math.sqrt(r2) * scale
    if not math.isfinite(r):
        return None
    return _circle_residuals(pts, cx, cy, r)


def _circle_residuals(pts: np.ndarray, cx: float, cy: float, r: float) -> CircleFit:
    res = np.abs(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r)
    return CircleFit(float(cx), float(cy), float(r), float(res.max()), float(res @ res))


def refine_circle(pts: np.ndarray, fit: CircleFit) -> CircleFit:
    """One Gauss-Newton step on the geometric (orthogonal distance) circle fit."""
    dx, dy = pts[:, 0] - fit.cx, pts[:, 1] - fit.cy
    rho = np.hypot(dx, dy)
    if np.any(rho == 0):
        return fit
    J = np.column_stack((-dx / rho, -dy / rho, -np.ones(len(pts))))
    res = rho - fit.radius
    step, *_ = np.linalg.lstsq(J, -res, rcond=None)
    cand = _circle_residuals(pts, fit.cx + step[0], fit.cy + step[1], fit.radius + step[2])
    return cand if cand.sse <= fit.sse else fit


def _unwrapped_sweep(pts: np.ndarray, cx: float, cy: float) -> float:
    ang = np.arctan2(pts[:, 1] - cy, pts[:, 0] - cx)
    dphi = np.diff(ang)
    dphi = (dphi + math.pi) % TWO_PI - math.pi
    return float(dphi.sum())


class _Model(NamedTuple):
    kind: str
    fit: LineFit | CircleFit
    max_res: float
    sse: float


def _best_model(pts: np.ndarray, threshold: float, r_line: float, r_min: float) -> _Model | None:
    """Best admissible model for ``pts`` or None if nothing fits within threshold."""
    line = fit_line(pts)
    cands = [_Model("line", line, line.max_res, line.sse)]
    if len(pts) >= 3 and line.max_res > 0.0:
        circ = fit_circle_kasa(pts)
        if circ is not None and r_min <= circ.radius <= r_line:
            if abs(_unwrapped_sweep(pts, circ.cx, circ.cy)) < math.pi:
                cands.append(_Model("arc", circ, circ.max_res, circ.sse))
    best = min(cands, key=lambda m: m.max_res)
    return best if best.max_res <= threshold else None


def _close_model(pts: np.ndarray, model: _Model, threshold: float, r_line: float, r_min: float) -> _Model:
    if model.kind != "arc":
        return model
    ref = refine_circle(pts, model.fit)
    if ref.max_res <= threshold and r_min <= ref.radius <= r_line:
        return _Model("arc", ref, ref.max_res, ref.sse)
    return model


def _segment_from_model(pts: np.ndarray, model: _Model) -> Segment:
    if model.kind == "line":
        f = model.fit
        t0 = (pts[0, 0] - f.cx) * f.ux + (pts[0, 1] - f.cy) * f.uy
        t1 = (pts[-1, 0] - f.cx) * f.ux + (pts[-1, 1] - f.cy) * f.uy
        return Line(f.cx + t0 * f.ux, f.cy + t0 * f.uy, f.cx + t1 * f.ux, f.cy + t1 * f.uy)
    f = model.fit
    phi0 = math.atan2(pts[0, 1] - f.cy, pts[0, 0] - f.cx)
    return Arc(f.cx, f.cy, f.radius, phi0, _unwrapped_sweep(pts, f.cx, f.cy))


def dedupe_points(pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.hypot(*np.diff(pts, axis=0).T) > tol
    if not keep.all():
        warnings.warn(f"dropped {int((~keep).sum())} duplicate trace points", stacklevel=3)
    return pts[keep]


def segment_breaks(pts: np.ndarray, fit_threshold: float = FIT_THRESHOLD, r_line: float = R_LINE,
                   r_min: float = R_MIN) -> list[int]:
    """Indices of segment boundaries (first and last point included)."""
    n = len(pts)
    breaks = [0]
    start = 0
    while start < n - 1:
        end = start + 1
        while end + 1 < n and _best_model(pts[start:end + 2], fit_threshold, r_line, r_min) is not None:
            end += 1
        breaks.append(end)
        start = end
    for _ in range(REFINE_PASSES):
        refined = _refine_junctions(pts, breaks, fit_threshold, r_line, r_min)
        if refined == breaks:
            break
        breaks = refined
    return breaks


def _refine_junctions(pts, breaks, thr, r_line, r_min):
    breaks = list(breaks)
    for j in range(1, len(breaks) - 1):
        lo, mid, hi = breaks[j - 1], breaks[j], breaks[j + 1]
        best_k, best_cost = mid, math.inf
        for k in range(max(lo + 1, mid - JUNCTION_SEARCH), min(hi - 1, mid + JUNCTION_SEARCH) + 1):
            left = _best_model(pts[lo:k + 1], thr, r_line, r_min)
            if left is None:
                continue
            right = _best_model(pts[k:hi + 1], thr, r_line, r_min)
            if right is None:
                continue
            cost = left.sse + right.sse
            if cost < best_cost - 1e-15 or (abs(cost - best_cost) <= 1e-15 and k == mid):
                best_k, best_cost = k, cost
        breaks[j] = best_k
    return breaks


def fit_segments(points, fit_threshold: float = FIT_THRESHOLD, r_line: float = R_LINE,
                 r_min: float = R_MIN) -> Trajectory:
    """Fit a G0 line/arc chain through ordered samples.

    Every input point ends up within ``fit_threshold`` of its own segment.
    Neighbouring segments share their junction sample, so consecutive
    endpoints agree to within ``2 * fit_threshold``.
    """
    if fit_threshold <= 0:
        raise ValueError("fit_threshold must be > 0")
    pts = dedupe_points(np.asarray(_as_xy(points), dtype=float))
    if len(pts) < MIN_FIT_POINTS:
        raise InsufficientPreview(f"need at least {MIN_FIT_POINTS} distinct points, got {len(pts)}")
    breaks = segment_breaks(pts, fit_threshold, r_line, r_min)
    segs = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        chunk = pts[a:b + 1]
        model = _best_model(chunk, fit_threshold, r_line, r_min)
        model = _close_model(chunk, model, fit_threshold, r_line, r_min)
        segs.append(_segment_from_model(chunk, model))
    return Trajectory(segs)


def max_residual(traj: Trajectory, pts: np.ndarray) -> float:
    return max(traj.match_point(float(x), float(y)).distance for x, y in pts)


# ---------------------------------------------------------------------------
# CSV trace I/O

TRACE_COLUMNS = ("vehicle_id", "t", "x", "y")


def write_trace_csv(path, points: Iterable[TracePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for p in points:
            w.writerow((p.source_vehicle_id, repr(float(p.timestamp)), repr(float(p.x)), repr(float(p.y))))


def read_trace_csv(path) -> dict[int, list[TracePoint]]:
    """Traces keyed by vehicle id; validates header, finiteness and time order."""
    traces: dict[int, list[TracePoint]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(TRACE_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vid, t, x, y = int(row[0]), float(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not all(math.isfinite(v) for v in (t, x, y)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            pts = traces.setdefault(vid, [])
            if pts and t <= pts[-1].timestamp:
                raise ValueError(f"{path}:{lineno}: timestamps must increase for vehicle {vid}")
            pts.append(TracePoint(x, y, t, vid))
    return traces
