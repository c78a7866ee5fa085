import numpy as np
import pytest

from entropy_sc.special import set_erf_backend


@pytest.fixture(autouse=True)
def _scipy_erf_backend():
    # tests that switch the backend must not leak it into later tests
    set_erf_backend("scipy")
    yield
    set_erf_backend("scipy")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def acceptance_record():
    def record(number, title, passed, detail):
        ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
