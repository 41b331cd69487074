import time

import numpy as np
import pytest

from svbench import waveform as wf
from svbench.pipeline import builtin_stream, fit_model


@pytest.fixture(scope="session")
def train_stream():
    return builtin_stream("train")


@pytest.fixture(scope="session")
def event1():
    return builtin_stream("event1")


@pytest.fixture(scope="session")
def event2():
    return builtin_stream("event2")


@pytest.fixture(scope="session")
def trained_mlp(train_stream):
    """Default MLP on the default 22 s synthetic stream, seed 0."""
    t0 = time.perf_counter()
    fit = fit_model("mlp", train_stream, seed=0)
    fit.elapsed_s = time.perf_counter() - t0
    return fit


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet_cfg():
    return wf.GridConfig(noise_stddev=0.0)


@pytest.fixture(scope="session")
def event1_trace(trained_mlp, event1):
    from svbench.streaming import run_stream

    return run_stream(trained_mlp.network, event1, trained_mlp.scaler)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
