from contextlib import contextmanager

import numpy as np
import pytest

from gbinfluence import dataio
from gbinfluence.gbdt import Params, fit


@pytest.fixture(scope="session")
def small_clf():
    """n=200, d=5 binary task with held-out rows."""
    full = dataio.make_classification(260, 5, seed=1)
    return full.take(np.arange(200)), full.take(np.arange(200, 260))


@pytest.fixture(scope="session")
def small_model(small_clf):
    train, _ = small_clf
    params = Params(n_trees=20, depth=3, learning_rate=0.2)
    ens, trace = fit(train, params)
    return train, params, ens, trace


def depth0_dataset(y):
    y = np.asarray(y, dtype=float)
    return dataio.Dataset(np.zeros((len(y), 1)), y)


DEPTH0 = Params(n_trees=1, depth=0, learning_rate=1.0, l2=0.0, loss="squared", formula="newton", bias=0.0)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""
    @contextmanager
    def record(number: int, title: str):
        try:
            yield
        except BaseException as exc:
            detail = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            line = f"criterion {number:>2} FAIL  {title}: {detail}"
            _CRITERIA.append(line)
            print(line)
            raise
        line = f"criterion {number:>2} PASS  {title}"
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
