import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tcldispatch.model import load_scenario  # noqa: E402
from tcldispatch.monotone import SegmentProblem, solve_segment  # noqa: E402
from report import ACCEPTANCE_LINES  # noqa: E402

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def example1():
    return load_scenario(SCENARIOS / "example1.json")


@pytest.fixture(scope="session")
def example2():
    return load_scenario(SCENARIOS / "example2.json")


@pytest.fixture(scope="session")
def example1_plan(example1):
    problem = SegmentProblem.from_scenario(example1)
    return problem, solve_segment(problem)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
