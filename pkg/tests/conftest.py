import numpy as np
import pytest

from optigrover.engine import Cavity, CavityConfig
from optigrover.field import BeamParams, GridSpec
from optigrover.optics import LossModel, PlateSpec, Spot


def centred_cavity(channels=100, n=512, loss=LossModel(), **kw):
    beam = BeamParams.from_channel_count(channels)
    grid = GridSpec.for_beam(beam, n)
    rs = beam.spot_radius
    oracle = PlateSpec((Spot((0, 0), rs),), "image")
    focus = PlateSpec((Spot((0, 0), rs),), "focal")
    return CavityConfig(grid, beam, oracle, focus, loss, **kw)


@pytest.fixture(scope="session")
def small_cavity():
    """N = 100 on a 512 grid: quick but well inside the two-mode regime."""
    return Cavity(centred_cavity())


@pytest.fixture(scope="session")
def canonical_cavity():
    return Cavity(centred_cavity(400, 1024))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion -> list of (ok, detail), filled by the acceptance suite
VERDICTS: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        VERDICTS.setdefault(number, []).append((bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        parts = VERDICTS[k]
        state = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {k:2d}: {state}  " + "; ".join(d for _, d in parts))
