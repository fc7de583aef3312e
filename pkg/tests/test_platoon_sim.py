"""Platoon simulation: lead path geometry, bookkeeping, determinism and
time-domain behaviour against the frequency-domain certificate."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from platoon_lateral.controller import ControllerConfig
from platoon_lateral.platoon_sim import (
    LeadPathSpec, ScenarioConfig, build_lead_path, perturbation_experiment, run_scenario,
    s_curve_radius, state_norms,
)
from platoon_lateral.string_stability import certify

# [DERIVED] S-curve of 100 m x 3.7 m: two tangent arcs of radius
# ((L/2)^2 + (h/2)^2) / h, evaluated by hand.
R_ELC = (50.0**2 + 1.85**2) / 3.7


def short(**kw) -> ScenarioConfig:
    base = dict(n_vehicles=3, duration=6.0,
                lead_path=LeadPathSpec(straight_in=60.0, change_length=100.0, dwell=40.0,
                                       return_length=100.0, straight_out=100.0))
    base.update(kw)
    return ScenarioConfig(**base)


# ---------------------------------------------------------------------------
# lead path


def test_s_curve_radius_value():
    assert s_curve_radius(100.0, -3.7) == pytest.approx(R_ELC, rel=1e-12)
    assert R_ELC == pytest.approx(676.6, abs=0.05)


def test_zero_offset_path_is_one_line():
    spec = LeadPathSpec(lane_offset=0.0)
    path = build_lead_path(spec)
    assert len(path) == 1
    assert path.length == pytest.approx(spec.total, abs=1e-12)


def test_double_lane_change_geometry():
    spec = LeadPathSpec()
    path = build_lead_path(spec)
    kinds = [s.kind for s in path.segments]
    assert kinds == ["line", "arc", "arc", "line", "arc", "arc", "line"]
    for seg in path.segments:
        if seg.kind == "arc":
            assert seg.radius == pytest.approx(R_ELC, rel=1e-12)
    # tangent continuity at every junction
    for a, b in zip(path.segments, path.segments[1:]):
        assert math.dist(a.end, b.start) < 1e-9
        assert abs(math.remainder(a.heading_at(a.length) - b.heading_at(0.0), 2 * math.pi)) < 1e-12
    # lane reached after the first S-curve, back on y = 0 after the second
    dwell = path.segments[3]
    assert dwell.start[1] == pytest.approx(spec.lane_offset, abs=1e-9)
    assert dwell.end[0] - dwell.start[0] == pytest.approx(spec.dwell)
    end = path.segments[-1].end
    assert end[1] == pytest.approx(0.0, abs=1e-9)
    assert end[0] == pytest.approx(spec.total, abs=1e-9)


@given(offset=st.one_of(st.just(0.0), st.floats(1e-3, 6.0), st.floats(-6.0, -1e-3)),
       change=st.floats(60.0, 200.0))
def test_arclength_exceeds_straight_length(offset, change):
    spec = LeadPathSpec(change_length=change, return_length=change, lane_offset=offset)
    path = build_lead_path(spec)
    if offset == 0.0:
        assert path.length == pytest.approx(spec.total, abs=1e-9)
    else:
        assert path.length > spec.total
        assert path.segments[-1].end[1] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("kw, msg", [
    (dict(n_vehicles=1), "n_vehicles"),
    (dict(spacing=0.0), "spacing"),
    (dict(V0=-1.0), "V0"),
    (dict(dt=0.02), "dt"),
    (dict(comm_delay=-0.1), "comm_delay"),
    (dict(trace_interval=0.0015), "trace_interval"),
    (dict(duration=0.0), "duration"),
    (dict(lead_path=LeadPathSpec(change_length=5.0, lane_offset=3.7)), "change_length"),
])
def test_scenario_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        ScenarioConfig(**kw)


def test_lead_path_spec_validation():
    with pytest.raises(ValueError, match="dwell"):
        LeadPathSpec(dwell=0.0)
    with pytest.raises(ValueError, match="lane_offset"):
        LeadPathSpec(lane_offset=math.nan)
    with pytest.raises(ValueError, match="lane_offset"):
        LeadPathSpec(lane_offset=1e-6)


# ---------------------------------------------------------------------------
# bookkeeping


@pytest.fixture(scope="module")
def short_run():
    return run_scenario(short())


def test_straight_road_stays_put():
    cfg = short(lead_path=LeadPathSpec(lane_offset=0.0))
    out = run_scenario(cfg)
    assert np.abs(out.e_lat).max() < 1e-9
    assert np.abs(out.delta_c).max() < 1e-9
    assert not out.events


def test_series_shapes_and_summary(short_run):
    out = short_run
    n = len(out.t)
    for name in ("e_lat", "e_lat_lead", "e_lat_prec", "e_nominal", "delta_c", "delta_f", "X", "Y", "theta"):
        assert getattr(out, name).shape == (3, n)
    assert out.t[0] == 0.0
    assert out.t[-1] == pytest.approx(6.0)
    assert np.allclose(np.diff(out.t), 0.01)
    s = out.summary()
    assert s["n_samples"] == n
    assert s["max_abs_e_lat"] == pytest.approx(np.abs(out.e_lat).max(axis=1).tolist(), abs=0)
    assert s["max_abs_delta_c"] == pytest.approx(np.abs(out.delta_c).max(axis=1).tolist(), abs=0)


def test_vehicles_move_at_constant_speed(short_run):
    # no longitudinal dynamics: forward body speed is V0, and the small
    # lateral sliding velocity can only add to the distance travelled
    out = short_run
    for i in range(3):
        travelled = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(out.X[i]), np.diff(out.Y[i])))))
        assert travelled == pytest.approx(20.0 * out.t, rel=1e-5, abs=1e-9)
        assert np.all(travelled >= 20.0 * out.t * (1 - 1e-9))


def test_written_files_recompute_summary(short_run, tmp_path):
    files = short_run.write(tmp_path)
    assert [f.name for f in files] == ["vehicle_01.csv", "vehicle_02.csv", "vehicle_03.csv", "summary.json"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    for i in range(3):
        data = np.genfromtxt(tmp_path / f"vehicle_{i + 1:02d}.csv", delimiter=",", names=True)
        assert len(data) == summary["n_samples"]
        assert np.abs(data["e_lat"]).max() == summary["max_abs_e_lat"][i]
        assert np.abs(data["delta_c"]).max() == summary["max_abs_delta_c"][i]


def test_byte_identical_reruns(tmp_path):
    cfg = short(comm_delay=0.05)
    a = run_scenario(cfg).write(tmp_path / "a")
    b = run_scenario(cfg).write(tmp_path / "b")
    for fa, fb in zip(a, b):
        assert fa.read_bytes() == fb.read_bytes()


def test_comm_delay_changes_response_only_slightly(short_run):
    delayed = run_scenario(short(comm_delay=0.1))
    assert delayed.e_lat.shape == short_run.e_lat.shape
    assert np.isfinite(delayed.e_lat).all()
    assert not np.array_equal(delayed.e_lat[1:], short_run.e_lat[1:])
    assert np.abs(delayed.e_lat).max() < 0.5


def test_short_preview_logs_and_continues():
    out = run_scenario(short(L_preview=3.0, duration=2.0))
    assert out.events
    assert {e.kind for e in out.events} == {"insufficient-preview"}
    assert all(e.vehicle >= 1 for e in out.events)
    assert np.isfinite(out.e_lat).all()


# ---------------------------------------------------------------------------
# perturbation on a straight road


def test_zero_perturbation_gives_zero_norms():
    r = perturbation_experiment(ScenarioConfig(n_vehicles=3), initial_offset=(0.0, 0.0), settle_time=3.0)
    assert np.all(r.norms == 0.0)
    assert r.max_ratio == 0.0


@pytest.fixture(scope="module")
def alpha_half():
    return perturbation_experiment(ScenarioConfig(n_vehicles=4, controller=ControllerConfig(alpha=0.5)),
                                   settle_time=30.0)


def test_state_norms_definition(alpha_half):
    out = alpha_half.output
    manual = np.sqrt([np.sum(out.Y[i] ** 2 + out.theta[i] ** 2) * 0.01 for i in range(4)])
    assert alpha_half.norms == pytest.approx(manual, rel=1e-12)
    assert state_norms(out, 0.01) == pytest.approx(manual, rel=1e-12)


def test_energy_decays_over_tail(alpha_half):
    # the total energy oscillates with the underdamped modes, so compare its
    # envelope: the peak over each 2 s window of the second half never rises
    # until it reaches the round-off floor (states of order 1e-15 m)
    out = alpha_half.output
    E = (out.Y**2 + out.theta**2).sum(axis=0)
    tail = E[len(E) // 2:]
    w = 200
    peaks = np.array([tail[k:k + w].max() for k in range(0, len(tail) - w + 1, w)])
    floor = 1e-24 * E.max()
    assert len(peaks) >= 5
    assert np.all(peaks[1:] <= np.maximum(peaks[:-1], floor))
    assert tail[-1] < floor


def test_alpha_one_ratios_grow():
    r = perturbation_experiment(ScenarioConfig(n_vehicles=4, controller=ControllerConfig(alpha=1.0)),
                                settle_time=15.0)
    assert r.ratios[0] == 1.0
    assert np.all(np.diff(r.ratios) > 0)


def test_time_domain_within_frequency_bound():
    # instantaneous actuation makes the simulated loop match the frequency model
    cfg = ScenarioConfig(n_vehicles=4, instantaneous_actuation=True,
                         controller=ControllerConfig(alpha=0.05))
    rep = certify(cfg.controller.gains, 0.05, cfg.vehicle, cfg.V0)
    assert rep.verdict == "certified"
    r = perturbation_experiment(cfg, settle_time=20.0)
    assert r.max_ratio <= 1.05 * rep.bound_M_telescoped
