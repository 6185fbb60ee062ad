import sys

import numpy as np
import pytest

from clmmmc.model import random_model, random_partition
from clmmmc.simulate import sample_trajectory
from clmmmc.stochastic import Partition, make_rng


def small_instance(rng, R_max=4, S_max=3, T_max=8, T_min=0):
    """Random model with a random partition and one trajectory drawn from it."""
    R = int(rng.integers(1, R_max + 1))
    S = int(rng.integers(1, S_max + 1))
    p = int(rng.integers(1, R + 1))
    gamma = random_partition(R, p, rng) if p > 1 else Partition.trivial(R)
    model = random_model(R, S, gamma, rng)
    T = int(rng.integers(T_min, T_max + 1))
    return model, sample_trajectory(model, T, rng)


@pytest.fixture
def rng():
    return make_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    ran = {int(item.name[5:7]) for item in getattr(terminalreporter.config, "_acceptance_items", [])}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n:>2} FAIL: did not complete"))


def pytest_collection_modifyitems(config, items):
    config._acceptance_items = [i for i in items if i.module.__name__ == "test_acceptance"]
