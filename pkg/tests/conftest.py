import numpy as np
import pytest

from lidar4d import set_backend
from lidar4d._backend import HAVE_NUMBA
from lidar4d.fixture import make_fixture

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = set_backend(request.param)
    yield request.param
    set_backend(prev)


@pytest.fixture(scope="session")
def fixture10():
    return make_fixture(10, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Call with ``(number, title, ok, detail)``; the line is also printed at the end of the run."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
