import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def tiny_records():
    """A two-map expert dataset, small enough to build in a few seconds."""
    from depthnav.expert import DatasetConfig, build_dataset

    records, _ = build_dataset(DatasetConfig(n_maps=2, trajectories_per_map=2, seed=5, course_range=(20.0, 25.0)))
    return records


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""
    lines = request.config._acceptance_lines

    def record(name, ok, detail, expected_failure=None):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        if not ok:
            if expected_failure:
                pytest.xfail(expected_failure)
            pytest.fail(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
