import pytest
from hypothesis import HealthCheck, settings

from cbsp.fixtures import grid_fixture, net1_like_fixture, three_node_fixture

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def three_node():
    return three_node_fixture()


@pytest.fixture(scope="session")
def net1():
    return net1_like_fixture()


@pytest.fixture(scope="session")
def net1_case3():
    return net1_like_fixture(3)


@pytest.fixture(scope="session")
def grid():
    return grid_fixture()


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line per acceptance criterion and fail the test on a miss."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
