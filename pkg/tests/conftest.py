import numpy as np
import pytest

from layermask import nn
from layermask.config import RunConfig
from layermask.data import load_dataset
from layermask.framework import Session


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits():
    return load_dataset({"kind": "digits"})


@pytest.fixture(scope="session")
def small_blobs():
    return load_dataset({"kind": "blobs", "n_samples": 300, "n_features": 16, "n_classes": 3})


def make_session(dataset, **overrides):
    cfg = RunConfig(**{"figures": False, **overrides})
    return Session(cfg, dataset)


def snapshot(model: nn.MLP):
    return [(l.weight.copy(), l.bias.copy(), l.masked) for l in model.layers]


def same_snapshot(a, b):
    return all(np.array_equal(wa, wb) and np.array_equal(ba, bb) and ma == mb
               for (wa, ba, ma), (wb, bb, mb) in zip(a, b))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for n in sorted(report):
            terminalreporter.write_line(report[n])
