import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pcatdyn import phantom  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def paper_sim():
    return phantom.simulate(phantom.paper_preset())


@pytest.fixture(scope="session")
def stenosis_sim():
    return phantom.simulate(phantom.stenosis_preset())


@pytest.fixture(scope="session")
def volume_sim():
    return phantom.simulate(phantom.volume_preset())


@pytest.fixture(scope="session")
def small_sim():
    """Coarse paper layout for quick end-to-end checks."""
    return phantom.simulate(phantom.paper_preset(dims=(48, 48, 20)))
