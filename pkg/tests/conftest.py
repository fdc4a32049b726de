import numpy as np
import pytest

from centerdepth.kitti_io import CameraCalibration

KITTI_P = np.array([
    [721.54, 0.0, 609.56, 44.86],
    [0.0, 721.54, 172.85, 0.22],
    [0.0, 0.0, 1.0, 0.003],
])


@pytest.fixture
def identity_calib():
    return CameraCalibration(np.hstack([np.eye(3), np.zeros((3, 1))]))


@pytest.fixture
def kitti_calib():
    return CameraCalibration(KITTI_P.copy())


@pytest.fixture
def pinhole_calib():
    # translation only along x, so the principal point is hit exactly on axis
    P = np.array([[721.54, 0, 609.56, 44.86], [0, 721.54, 172.85, 0], [0, 0, 1, 0]])
    return CameraCalibration(P)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
