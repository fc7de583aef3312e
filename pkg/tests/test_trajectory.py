import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from platoon_lateral.trajectory import (
    Arc, InsufficientPreview, Line, TracePoint, Trajectory, compute_errors, fit_circle_kasa, fit_line,
    fit_segments, max_residual, preview_window, read_trace_csv, refine_circle, segment_breaks,
    wrap_angle, write_trace_csv,
)
from platoon_lateral.vehicle_model import GlobalPose


def arc_points(R, phi0, sweep, ds, cx=0.0, cy=0.0):
    n = int(round(R * abs(sweep) / ds))
    phi = phi0 + np.sign(sweep) * np.arange(n + 1) * ds / R
    return np.column_stack((cx + R * np.cos(phi), cy + R * np.sin(phi)))


def line_arc_line(ds=0.5, R=100.0, sweep=0.4, L=30.0):
    """Straight L, left arc of radius R, straight L; returns points and true junction indices."""
    n_line = int(round(L / ds))
    a = np.column_stack((np.arange(n_line + 1) * ds, np.zeros(n_line + 1)))
    arc = Arc(L, R, R, -math.pi / 2, sweep)
    n_arc = int(round(arc.length / ds))
    b = np.array([arc.point_at(k * arc.length / n_arc) for k in range(1, n_arc + 1)])
    h = arc.heading_at(arc.length)
    ex, ey = arc.end
    c = np.array([(ex + k * ds * math.cos(h), ey + k * ds * math.sin(h)) for k in range(1, n_line + 1)])
    return np.vstack((a, b, c)), (n_line, n_line + n_arc)


# -- angles and primitives ---------------------------------------------------


@given(st.floats(-50.0, 50.0))
def test_wrap_angle_range_and_equivalence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_pi_maps_to_pi():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi


def test_fit_line_recovers_direction():
    pts = np.column_stack((np.linspace(0, 10, 20), 3.0 + 0.5 * np.linspace(0, 10, 20)))
    f = fit_line(pts)
    assert f.max_res < 1e-12
    assert math.atan2(f.uy, f.ux) == pytest.approx(math.atan(0.5), abs=1e-12)


def test_circle_fit_degenerate_on_collinear_points():
    pts = np.column_stack((np.arange(10.0), np.zeros(10)))
    assert fit_circle_kasa(pts) is None


def test_geometric_refinement_never_worsens(rng):
    pts = arc_points(30.0, 0.3, 0.8, 0.5) + rng.normal(scale=0.01, size=(49, 2))
    k = fit_circle_kasa(pts)
    g = refine_circle(pts, k)
    assert g.sse <= k.sse


# -- fitting -----------------------------------------------------------------


def test_collinear_points_give_one_line():
    pts = np.column_stack((np.linspace(0, 19, 20), np.linspace(0, 9.5, 20)))
    traj = fit_segments(pts)
    assert len(traj) == 1 and traj.segments[0].kind == "line"
    assert max_residual(traj, pts) < 1e-12


@pytest.mark.parametrize("ds", [50 * math.pi / 2 / 49, 0.5])
def test_quarter_circle_recovered(ds):
    pts = arc_points(50.0, 0.0, math.pi / 2, ds)
    traj = fit_segments(pts)
    assert len(traj) == 1
    seg = traj.segments[0]
    assert seg.kind == "arc" and seg.orientation == "left"
    assert abs(seg.radius - 50.0) / 50.0 < 1e-3


def test_three_segment_path_junctions():
    pts, (j1, j2) = line_arc_line()
    traj = fit_segments(pts)
    assert [s.kind for s in traj.segments] == ["line", "arc", "line"]
    breaks = segment_breaks(pts)
    assert abs(breaks[1] - j1) <= 1 and abs(breaks[2] - j2) <= 1
    assert traj.segments[1].radius == pytest.approx(100.0, rel=1e-6)


def test_right_turn_has_negative_curvature():
    pts = arc_points(80.0, math.pi / 2, -0.6, 0.5)
    seg = fit_segments(pts).segments[0]
    assert seg.orientation == "right" and seg.curvature == pytest.approx(-1 / 80.0, rel=1e-6)


def test_very_large_radius_becomes_line():
    pts = arc_points(5e4, -math.pi / 2, 40.0 / 5e4, 0.5)
    traj = fit_segments(pts)
    assert [s.kind for s in traj.segments] == ["line"]


def test_duplicates_are_dropped_with_warning():
    pts = np.column_stack((np.repeat(np.arange(10.0), 2), np.zeros(20)))
    with pytest.warns(UserWarning, match="duplicate"):
        traj = fit_segments(pts)
    assert traj.length == pytest.approx(9.0)


def test_too_few_points():
    with pytest.raises(InsufficientPreview):
        fit_segments(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        fit_segments(np.zeros((5, 2)) + np.arange(5)[:, None], fit_threshold=0.0)


@st.composite
def chains(draw):
    """Random G1 line/arc chains sampled at a fixed spacing."""
    n = draw(st.integers(1, 4))
    x, y, h = 0.0, 0.0, draw(st.floats(-math.pi, math.pi))
    segs = []
    for _ in range(n):
        if draw(st.booleans()):
            L = draw(st.floats(10.0, 40.0))
            segs.append(Line(x, y, x + L * math.cos(h), y + L * math.sin(h)))
        else:
            R = draw(st.floats(20.0, 500.0))
            sweep = draw(st.floats(10.0, 50.0)) / R * draw(st.sampled_from([-1, 1]))
            sgn = math.copysign(1.0, sweep)
            cx, cy = x - sgn * R * math.sin(h), y + sgn * R * math.cos(h)
            segs.append(Arc(cx, cy, R, math.atan2(y - cy, x - cx), sweep))
        seg = segs[-1]
        x, y = seg.end
        h = seg.heading_at(seg.length)
    return Trajectory(segs)


@given(chains(), st.sampled_from([0.005, 0.02, 0.05]))
def test_every_point_within_threshold(traj, thr):
    pts = traj.sample(0.5)
    fitted = fit_segments(pts, fit_threshold=thr)
    d = np.array([fitted.match_point(*p).distance for p in pts])
    assert d.max() <= thr * (1 + 1e-9)
    # G0 chain: neighbouring fits share a sample, so endpoints agree within two thresholds
    for a, b in zip(fitted.segments[:-1], fitted.segments[1:]):
        assert math.dist(a.end, b.start) <= 2 * thr + 1e-9
    for seg in fitted.segments:
        if seg.kind == "arc":
            assert abs(seg.sweep) < math.pi and seg.radius >= 5.0
    assert fitted.length == pytest.approx(sum(s.length for s in fitted.segments))


@given(chains())
def test_refit_of_fitted_trajectory_is_no_more_complex(traj):
    fitted = fit_segments(traj.sample(0.5))
    dense = fitted.sample(0.25)
    refit = fit_segments(dense)
    assert len(refit) <= len(fitted)
    assert max_residual(refit, dense) <= 0.02 * (1 + 1e-9)


# -- matching ----------------------------------------------------------------


def dense_samples(traj, h=1e-3):
    out = []
    for seg in traj.segments:
        n = int(math.ceil(seg.length / h)) + 1
        s = np.linspace(0.0, seg.length, n)
        if seg.kind == "line":
            ux, uy = seg.direction
            out.append(np.column_stack((seg.x0 + s * ux, seg.y0 + s * uy)))
        else:
            phi = seg.phi0 + np.sign(seg.sweep) * s / seg.radius
            out.append(np.column_stack((seg.cx + seg.radius * np.cos(phi), seg.cy + seg.radius * np.sin(phi))))
    return np.vstack(out)


def test_match_agrees_with_brute_force(rng):
    pts, _ = line_arc_line()
    traj = fit_segments(pts)
    dense = dense_samples(traj)
    checked = 0
    for p in rng.uniform([-10, -20], [100, 40], size=(200, 2)):
        m = traj.match_point(*p)
        bf = float(np.hypot(*(dense - p).T).min())
        assert m.distance <= bf + 1e-9
        if bf > 0.1:
            # 1 mm sampling overestimates by at most h^2 / (8 d) < 2e-6 m here
            assert bf - m.distance < 2e-6
            checked += 1
    assert checked > 150


def test_match_minimal_over_many_queries(rng):
    traj = Trajectory([Line(0, 0, 20, 0), Arc(20, 30, 30, -math.pi / 2, 0.9)])
    dense = np.vstack([traj.sample(0.01)])
    for p in rng.uniform([-10, -20], [50, 40], size=(1000, 2)):
        m = traj.match_point(*p)
        assert m.distance <= np.hypot(*(dense - p).T).min() + 1e-12


def test_match_on_trajectory_is_exact():
    traj = Trajectory([Line(0, 0, 10, 0), Arc(10, 50, 50, -math.pi / 2, 0.5)])
    for s in (0.0, 3.0, 10.0, 20.0, traj.length):
        p = traj.point_at(s)
        m = traj.match_point(*p)
        assert m.distance < 1e-9 and math.dist((m.x, m.y), p) < 1e-9


def test_match_at_arc_centre_is_radius_and_earliest():
    arc = Arc(0.0, 0.0, 40.0, 0.0, 1.0)
    m = Trajectory([arc]).match_point(0.0, 0.0)
    assert m.distance == 40.0 and m.s == 0.0 and m.index == 0


def test_tie_goes_to_lowest_index():
    # point equidistant from two parallel lines
    traj = Trajectory([Line(0, 1, 10, 1), Line(10, -1, 0, -1)])
    assert traj.match_point(5.0, 0.0).index == 0


# -- errors ------------------------------------------------------------------


def test_errors_vanish_on_perfect_tracking():
    V = 20.0
    arc = Arc(0.0, 200.0, 200.0, -math.pi / 2, 0.5)
    traj = Trajectory([arc])
    s = 30.0
    x, y = arc.point_at(s)
    e = compute_errors(traj, GlobalPose(x, y, arc.heading_at(s), V / 200.0, 0.0), V)
    assert max(map(abs, e[:3])) < 1e-12 and e.curvature_at_match == pytest.approx(1 / 200.0)


def test_left_of_travel_is_positive():
    traj = Trajectory([Line(0, 0, 100, 0)])
    e = compute_errors(traj, GlobalPose(40.0, 0.1, 0.0, 0.0, 0.0), 20.0)
    assert e.e_lat == pytest.approx(0.1) and e.theta_err == 0.0 and e.curvature_at_match == 0.0


def test_outside_of_left_arc_is_negative():
    arc = Arc(0.0, 200.0, 200.0, -math.pi / 2, 0.5)
    phi = -math.pi / 2 + 0.2
    x, y = 200.05 * math.cos(phi), 200.0 + 200.05 * math.sin(phi)
    e = compute_errors(Trajectory([arc]), GlobalPose(x, y, phi + math.pi / 2, 0.0, 0.0), 20.0)
    assert e.e_lat == pytest.approx(-0.05, abs=1e-9)
    assert e.theta_err == pytest.approx(0.0, abs=1e-12)
    assert e.curvature_at_match == pytest.approx(1 / 200.0)


def test_errors_are_continuous_along_a_path():
    # vehicle drifting across a line/arc junction at 1 kHz sampling
    traj = Trajectory([Line(0, 0, 50, 0), Arc(50, 100, 100, -math.pi / 2, 0.5)])
    t = np.arange(0, 4.0, 1e-3)
    xs, ys = 30 + 10 * t, 0.3 * np.sin(t)
    th = 0.05 * np.cos(t)
    e = np.array([compute_errors(traj, GlobalPose(x, y, h, 0.0, 0.0), 10.0)[:2] for x, y, h in zip(xs, ys, th)])
    assert np.abs(np.diff(e, axis=0)).max() < 0.02


# -- preview window ----------------------------------------------------------


def straight_trace(n=100, ds=1.0):
    return [TracePoint(k * ds, 0.0, 0.1 * k, 1) for k in range(n)]


def test_preview_counts_chord_length():
    w = preview_window(straight_trace(), (0.0, 0.0), 10.0)
    assert len(w.points) == 11 and not w.truncated


def test_preview_truncated_at_end_of_trace():
    w = preview_window(straight_trace(), (95.0, 0.0), 10.0)
    assert len(w.points) == 5 and w.truncated


def test_preview_starts_at_nearest_sample(rng):
    trace = straight_trace()
    for ego in rng.uniform([0, -2], [80, 2], size=(50, 2)):
        w = preview_window(trace, ego, 10.0)
        xy = np.array([(p.x, p.y) for p in trace])
        nearest = int(np.argmin(np.hypot(*(xy - ego).T)))
        # the window starts at the nearest sample, or one earlier when the ego is behind it
        assert w.start in (nearest, nearest - 1)
        assert w.points[0][0] <= ego[0] + 1e-12 or w.start == 0


def test_preview_midpoint():
    w = preview_window(straight_trace(), (50.0, 1.0), 10.0)
    assert w.start == 50


def test_preview_errors():
    with pytest.raises(ValueError):
        preview_window([], (0, 0), 10.0)
    with pytest.raises(ValueError):
        preview_window(straight_trace(), (0, 0), 0.0)
    with pytest.raises(InsufficientPreview):
        preview_window(straight_trace(), (98.5, 0.0), 10.0)


# -- I/O and serialisation -----------------------------------------------------


def test_trace_csv_round_trip(tmp_path):
    pts = [TracePoint(0.1 * k, math.sin(k), 0.1 * k, 3) for k in range(20)]
    path = tmp_path / "t.csv"
    write_trace_csv(path, pts)
    assert read_trace_csv(path) == {3: pts}


@pytest.mark.parametrize("body", [
    "vehicle_id,t,x\n1,0,0\n",
    "vehicle_id,t,x,y\n1,0,0,nan\n",
    "vehicle_id,t,x,y\n1,1,0,0\n1,0.5,1,0\n",
    "vehicle_id,t,x,y\n1,zero,0,0\n",
])
def test_trace_csv_validation(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError):
        read_trace_csv(path)


def test_trajectory_dict_round_trip():
    pts, _ = line_arc_line()
    traj = fit_segments(pts)
    back = Trajectory.from_dict(traj.to_dict())
    for a, b in zip(traj.segments, back.segments):
        assert a.kind == b.kind
        assert math.dist(a.start, b.start) < 1e-9 and math.dist(a.end, b.end) < 1e-9
