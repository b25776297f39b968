import warnings

import numpy as np
import pytest

from plumepde.colehopf import GaussianBumpSpec, HJModel, exact_solution_field
from plumepde.field_io import Grid

_CRITERIA: list[str] = []


class Criteria:
    """Records one PASS/FAIL line per acceptance criterion and asserts it."""

    def check(self, name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def criteria() -> Criteria:
    return Criteria()


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def cole_hopf_field(n=100, n_t=200, dt=0.25, a=9.0, beta=0.666, amplitude=100.0, sigma0=8.0, drift=None):
    g = Grid(n, n, n_t, 1.0, 1.0, dt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return exact_solution_field(GaussianBumpSpec(amplitude, 0.5 * g.L_x, 0.5 * g.L_y, sigma0),
                                    HJModel(a, beta, drift), g)


@pytest.fixture(scope="session")
def ch_field():
    return cole_hopf_field()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
