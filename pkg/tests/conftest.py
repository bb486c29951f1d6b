from pathlib import Path

import numpy as np
import pytest

from tabkan.datapipe import Dataset, load_dataset

DATA = Path(__file__).resolve().parents[1] / "src" / "tabkan" / "data"


@pytest.fixture(scope="session")
def cg():
    return load_dataset(DATA / "credit_g.csv")


@pytest.fixture(scope="session")
def sg():
    return load_dataset(DATA / "segment.csv")


@pytest.fixture
def toy():
    """Two Gaussian blobs, 120 rows, 4 features, imbalanced 80/40."""
    rng = np.random.default_rng(0)
    y = np.r_[np.zeros(80, int), np.ones(40, int)]
    x = rng.normal(size=(120, 4)) + 1.5 * y[:, None] * np.array([1.0, -1.0, 0.5, 0.0])
    return Dataset(x, y, [f"f{i}" for i in range(4)], 2, ["a", "b"], [f"f{i}" for i in range(4)])


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda t: t[0]):
            terminalreporter.write_line(line)
