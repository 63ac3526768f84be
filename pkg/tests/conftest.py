import numpy as np
import pytest

from cathtrack.biplane import BiplaneGeometry
from cathtrack.design import build_helical_design, helix_for_turns


@pytest.fixture
def design():
    """Reference catheter: 25 mm, r = 1 mm, 19 markers on a 2-turn helix."""
    return build_helical_design(25.0, 1.0, 19, helix_for_turns(25.0, 19, 2.0))


@pytest.fixture
def small_design():
    return build_helical_design(25.0, 1.0, 7, helix_for_turns(25.0, 7, 1.0))


@pytest.fixture
def geom():
    return BiplaneGeometry.canonical()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Append ``(criterion, passed, detail)``; lines are printed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
