import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    ACCEPTANCE_LINES.append(f"{'PASS' if rep.passed else 'FAIL'}  {marker.args[0]}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
