import os

import pytest

from bifscope.family import build_family

LATTES = "(z^2-c)^2/(4*z*(z-1)*(z-c))"
BACKENDS = ["numba", "numpy"]

_criteria = {}


def record(number, ok, detail=""):
    prev = _criteria.get(number)
    ok = bool(ok) and (prev is None or prev[0])
    text = detail if prev is None else f"{prev[1]}; {detail}"
    _criteria[number] = (ok, text)


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_criteria):
        ok, text = _criteria[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def quad():
    return build_family("z^2+c", "c")


@pytest.fixture(scope="session")
def lattes():
    return build_family(LATTES, "2")


@pytest.fixture(scope="session")
def cheb():
    return build_family("z^2-2", "c")


@pytest.fixture(scope="session")
def square():
    return build_family("z^2", "c")


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def pytest_configure(config):
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
