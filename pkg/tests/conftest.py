import numpy as np
import pytest
import torch

from gmner.core import BoundingBox, CandidateRegion, Example, Quadruple


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield


def box(x1, y1, x2, y2):
    return BoundingBox(x1, y1, x2, y2)


def region(x1, y1, x2, y2, dim=4, fill=0.0):
    return CandidateRegion(box(x1, y1, x2, y2), tuple([fill] * dim))


@pytest.fixture
def tiny_example():
    regions = [region(0, 0, 1, 1), region(2, 2, 3, 3), region(0, 0, 0.5, 0.5)]
    gold = [Quadruple(0, 1, 0, (box(0, 0, 1, 1),)), Quadruple(3, 3, 1, None)]
    return Example(["a", "b", "c", "d", "e"], regions, gold)


def random_probs(rng, u, n, k1):
    return (rng.uniform(0.01, 0.99, (u, n)), rng.uniform(0.01, 0.99, (u, n)),
            rng.uniform(0.01, 0.99, (u, k1)), rng.uniform(0.01, 0.99, u))


# one line per acceptance criterion, appended by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
