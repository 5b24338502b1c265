"""Shared fixtures: grids and solved manufactured instances."""

import numpy as np
import pytest
from hypothesis import settings

from hessbound.geometry import Ball
from hessbound.grid import Grid
from hessbound.harness import build_instance
from hessbound.solver import newton_solve, solve_supersolution

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def grid9():
    return Grid(Ball(n=2), 9)


@pytest.fixture(scope="session")
def grid17():
    return Grid(Ball(n=2), 17)


@pytest.fixture(scope="session")
def manufactured():
    """Radial log det instance with the strict subsolution u* − 0.1(1 − |z|²)."""
    return build_instance({"preset": "manufactured", "perturbation": 0.1})


@pytest.fixture(scope="session")
def solved17(manufactured, grid17):
    u, rep = newton_solve(manufactured, grid17)
    sup = solve_supersolution(manufactured, grid17)
    return manufactured, u, rep, sup


@pytest.fixture(scope="session")
def pn1_instance():
    return build_instance({"preset": "manufactured-pn1", "perturbation": 0.1})


@pytest.fixture(scope="session")
def pn1_solved17(pn1_instance, grid17):
    u, rep = newton_solve(pn1_instance, grid17)
    sup = solve_supersolution(pn1_instance, grid17)
    return pn1_instance, u, rep, sup


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance summary lines
# ---------------------------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance_line(request):
    """Record ``PASS``/``FAIL`` for one acceptance criterion.

    Call the yielded function with the criterion number, a label and the
    failing checks (an empty list means pass). The test then asserts on the
    same list, so the printed line and the outcome cannot disagree.
    """

    def record(number, label, failures, detail=""):
        status = "FAIL" if failures else "PASS"
        line = f"{status} criterion {number:>2}: {label}"
        if detail:
            line += f" [{detail}]"
        if failures:
            line += " :: " + "; ".join(map(str, failures))[:400]
        _ACCEPTANCE[number] = line
        print(line)
        assert not failures, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
