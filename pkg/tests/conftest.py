import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from morphosim.volume import Grid3, Volume3  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_volume(dims, seed=0):
    """Sum of low-frequency sinusoids: smooth enough for interpolation tests."""
    x, y, z = np.indices(dims, dtype=np.float64)
    r = np.random.default_rng(seed)
    out = np.zeros(dims)
    for _ in range(4):
        kx, ky, kz = r.uniform(0.1, 0.5, 3)
        out += r.uniform(0.5, 1.0) * np.sin(kx * x + ky * y + kz * z + r.uniform(0, 6))
    return Volume3(Grid3(dims), out)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
