import time

import pytest

from deepgrasp.synth import synth_dataset
from deepgrasp.training import TrainConfig, train_cascade

TRAIN_SEEDS = range(100, 130)
TEST_SEEDS = range(500, 510)


@pytest.fixture(scope="session")
def synthetic_cascade():
    """Small and large networks trained once on 30 synthetic scenes; shared by the slow tests."""
    scenes = synth_dataset(TRAIN_SEEDS)
    t0 = time.perf_counter()
    cascade, reports = train_cascade(scenes, config=TrainConfig(max_iters=200))
    return {"cascade": cascade, "reports": reports, "train_scenes": scenes,
            "test_scenes": synth_dataset(TEST_SEEDS), "train_seconds": time.perf_counter() - t0}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
