import numpy as np
import pytest

from sph_hands.skeleton_io import SkeletonSequence


def ntu_text(body_counts, joints=25, fields=12, value="0"):
    """Build a synthetic NTU .skeleton file body by body."""
    lines = [str(len(body_counts))]
    for n in body_counts:
        lines.append(str(n))
        for b in range(n):
            lines.append(f"{72057594037931101 + b} 0 1 1 1 1 0 0.1 0.2 2")
            lines.append(str(joints))
            for _ in range(joints):
                lines.append(" ".join([value] * fields))
    return "\n".join(lines) + "\n"


def fpha_text(n_frames, value="0"):
    return "".join(f"{t} " + " ".join([value] * 63) + "\n" for t in range(n_frames))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hand_seq(rng):
    """Random 8-joint single-body sequence, 6 frames."""
    return SkeletonSequence(rng.normal(size=(6, 1, 8, 3)), label=0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
