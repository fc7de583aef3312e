import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from platoon_lateral.config import load_config, shipped_config
from platoon_lateral.vehicle_model import ActuationParams, VehicleParams

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(shipped_config("default"))


@pytest.fixture(scope="session")
def vehicle(default_cfg) -> VehicleParams:
    return default_cfg.scenario.vehicle


@pytest.fixture(scope="session")
def actuation(default_cfg) -> ActuationParams:
    return default_cfg.scenario.actuation


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# -- acceptance reporting -------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the
# terminal summary, whatever the verbosity or capture settings.

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when in ("setup", "call"):
        # module fixtures run during setup, so their time counts toward the criterion
        _, prev_verdict, prev_time = _criteria.get(n, (title, "PASS", 0.0))
        verdict = "FAIL" if rep.failed or prev_verdict == "FAIL" else "PASS"
        _criteria[n] = (title, verdict, prev_time + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, verdict, elapsed = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({elapsed:.1f} s)")
