import numpy as np
import pytest

from maskweave.experiment import make_plan
from maskweave.models import build_model, init_weights

ACCEPTANCE_LINES = []


def record_acceptance(criterion, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def mlp():
    graph, space = build_model("mlp", 2, 2, 32)
    return graph, space


@pytest.fixture
def mlp_weights(mlp):
    graph, space = mlp
    return init_weights(space, graph, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_plan():
    """Seconds-scale plan for pipeline plumbing tests."""
    return make_plan(seed=3, pretrain_iters=50, k=2, total_iters=300,
                     sparsities=(0.3, 0.6), mc_trials=200,
                     dataset={"name": "spirals", "n_per_class": 100, "noise_sd": 0.05, "seed": 0})
