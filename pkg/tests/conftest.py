import numpy as np
import pytest

from fedms.data import LabeledDataset, synth_blobs


@pytest.fixture
def blobs2():
    return synth_blobs(2, 40, 4, 0.3, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_dataset(x, y, c):
    return LabeledDataset(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64), c)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
