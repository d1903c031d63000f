import numpy as np
import pytest

from fdot.forward import EllipsoidTarget, TimeGrid
from fdot.measurement import HolderLayout, simulate_measurements
from fdot.optics import Fluorophore, OpticalMedium

# Example 2 ground truth: ellipsoid under a ring of eight holder positions.
EX2_TRUTH = EllipsoidTarget((0.0, 0.0, 11.0), (1.5, 3.0, 1.5), 0.02)
EX2_GRID = dict(T=3335.0, dt=6.67)

_SUMMARY = []


def record(criterion, ok, detail=""):
    """Print and remember one PASS/FAIL line of the acceptance suite."""
    line = f"CRITERION {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    _SUMMARY.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_SUMMARY, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def medium():
    return OpticalMedium()


@pytest.fixture(scope="session")
def fluor():
    return Fluorophore()


@pytest.fixture(scope="session")
def ex2_grid():
    return TimeGrid.up_to(EX2_GRID["T"], EX2_GRID["dt"])


@pytest.fixture(scope="session")
def ex2_data(medium, fluor, ex2_grid):
    """Exact gated data of Example 2 (32 pairs x 20 gates)."""
    return simulate_measurements(medium, fluor, EX2_TRUTH, HolderLayout.ring8(), ex2_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# Seven-pair line scans under the cuboid (-1,1)x(-3,3)x(10,12): sources and
# detectors offset asymmetrically (12/-8) or symmetrically (10/-10) in x2.
LINE_X1 = [-16, -12, -8, -4, 5, 10, 15]
ASYM_PAIRS = [((x, 12.0), (x, -8.0)) for x in LINE_X1]
SYM_PAIRS = [((x, 10.0), (x, -10.0)) for x in LINE_X1]
LINE_TARGET = np.array([-1, 1, -3, 3, 10, 12, 0.01], dtype=float)

# five sources / five detectors near the corner of a shallow target
SMALL_T_TARGET = np.array([0, 2, -2, 2, 1, 3, 0.01], dtype=float)
SMALL_T_PAIRS = list(zip([(-3, -3), (-4, -3), (-5, -3), (-6, -4), (-7, -5)],
                         [(-3, -7), (-4, -7), (-5, -7), (-6, -8), (-7, -9)]))
