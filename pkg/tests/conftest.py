import numpy as np
import pytest

from tfmkit.material import MaterialParams


@pytest.fixture
def params():
    return MaterialParams.from_young_poisson(10_000.0, 0.45)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
