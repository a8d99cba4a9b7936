import numpy as np
import pytest

from l1qr.core import build_dataset


def gaussian_dataset(n, p, seed, intercept=True):
    rng = np.random.default_rng(seed)
    if intercept:
        X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    else:
        X = rng.standard_normal((n, p))
    y = rng.standard_normal(n) + X[:, : min(p, 3)].sum(axis=1)
    return build_dataset(X, y, intercept_col=0 if intercept else None)


@pytest.fixture
def median3():
    return build_dataset(np.ones((3, 1)), [1.0, 2.0, 3.0], intercept_col=0)


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Log one acceptance outcome; the lines are printed after the run."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
