import time

import numpy as np
import pytest

from credkit import cred, synth

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"[acceptance {criterion:>2}] {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def window_sets():
    """256 training, 64 validation and 64 held-out windows, half with events."""
    train = cred.dataset_from_windows(synth.training_windows(128, 128, seed=101))
    val = cred.dataset_from_windows(synth.training_windows(32, 32, seed=102))
    test = cred.dataset_from_windows(synth.training_windows(32, 32, seed=103))
    return train, val, test


@pytest.fixture(scope="session")
def desk_model(window_sets):
    """Desk-preset model trained once per session; returns (model, report, seconds)."""
    train, val, _ = window_sets
    model = cred.build_model(cred.PRESETS["desk"])
    start = time.perf_counter()
    model, report = cred.train(model, train, val, cred.TrainHyper(epochs=200, patience=20, seed=7))
    return model, report, time.perf_counter() - start
