import numpy as np
import pytest
from hypothesis import settings

from spsgm.data import quadratic_generate
from spsgm.eigensystem import build_eigensystem
from spsgm.kernels import KernelSpec

settings.register_profile("repo", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def quadratic():
    return quadratic_generate(2000, 0)


@pytest.fixture(scope="session")
def quadratic_es(quadratic):
    return build_eigensystem(KernelSpec("EmpiricalCovariance", data=quadratic), quadratic)


@pytest.fixture(scope="session")
def brownian_es():
    grid = np.arange(1, 1001) / 1000.0
    from spsgm.data import FunctionalDataset

    spec = KernelSpec("Custom", func=lambda A, B: np.minimum(A[:, :1], B[:, 0][None, :]))
    ds = FunctionalDataset.from_grid(grid, np.zeros((1, grid.size)))
    return build_eigensystem(spec, ds, normalization=None)
