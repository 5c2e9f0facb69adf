import numpy as np
import pytest

from endosim.geometry import CameraIntrinsics
from endosim.kinematics import SegmentLengths


@pytest.fixture
def K():
    return CameraIntrinsics(90.0, 90.0, 111.5, 111.5, 224, 224)


@pytest.fixture
def K_small():
    return CameraIntrinsics(40.0, 40.0, 31.5, 31.5, 64, 64)


@pytest.fixture
def lengths():
    return SegmentLengths()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
