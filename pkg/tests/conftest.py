import pytest
from hypothesis import HealthCheck, settings

import checks
from checks import app, itype, problem

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_problem():
    apps = [
        app("a0", 0, 4, 3.0, 1.0),
        app("a1", 1, 5, 2.0, 0.5),
        app("a2", 0, 6, 1.5, 0.3, preemptible=True),
        app("a3", 2, 6, 2.5, 0.8, preemptible=True),
    ]
    types = [
        itype("R", "reserved", 10.0, 1.0, 3),
        itype("O", "on-demand", 8.0, 1.5),
        itype("S", "spot", 6.0, 0.6),
    ]
    return problem(apps, types)


def pytest_terminal_summary(terminalreporter):
    if not checks.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(checks.RESULTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
