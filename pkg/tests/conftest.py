import numpy as np
import pytest

from highlight_stgcn.keypoint_data import KeypointFrame, ModalityTopology, PersonTrack

SQUARE = ModalityTopology("pose3d", 4, 2, ((0, 1), (1, 2), (2, 3)), "square")
MICRO = ModalityTopology("pose3d", 3, 2, ((0, 1), (1, 2)), "micro")


def frame(points, visible=None):
    points = np.asarray(points, dtype=float)
    if visible is None:
        visible = np.ones(len(points), dtype=bool)
    return KeypointFrame(points, np.asarray(visible, dtype=bool))


def track(pid, frames, modality="pose3d"):
    return PersonTrack(pid, {t: {modality: kf} for t, kf in frames.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
