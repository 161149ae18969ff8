import numpy as np
import pytest

from ballmedium import Bump, Domain, IncidentWave, RefractionProfile

CENTER = (0.5, 0.5, 0.5)


@pytest.fixture
def cube():
    return Domain.unit_cube()


@pytest.fixture
def wave():
    return IncidentWave(1.0, (0.0, 0.0, 1.0))


@pytest.fixture
def bump_n0(cube):
    # n0^2 = 1 + 0.3 * smooth bump centered in the cube
    return RefractionProfile(Bump(CENTER, 0.45, 0.3, 1.0), cube)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print a one-line verdict for an acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
