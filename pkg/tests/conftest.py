from functools import lru_cache

import pytest

from cdac.approx import approx_value_iteration
from cdac.errors import ConvergenceError
from cdac.observation import PeripheralTaskModel, SimpleTaskModel
from cdac.simplex import enumerate_cells
from cdac.solver import CostParams, value_iteration

PERIPHERAL_BETAS = (0.62, 0.6, 0.55, 0.5)


@lru_cache(maxsize=None)
def grid(n):
    return enumerate_cells(3, n)


@lru_cache(maxsize=None)
def simple_solution(c, cs, beta, n=200):
    return value_iteration(SimpleTaskModel(beta), CostParams(c, cs), grid(n))


@lru_cache(maxsize=None)
def peripheral_solution(c, cs, betas=PERIPHERAL_BETAS, n=200):
    return value_iteration(PeripheralTaskModel(betas), CostParams(c, cs), grid(n))


@lru_cache(maxsize=None)
def approx_run(model, c, cs, representation, m, seed=0, max_iterations=100):
    """Approximate VI result, taking the last iterate if the loop did not converge."""
    try:
        return approx_value_iteration(model, CostParams(c, cs), representation, m=m,
                                      seed=seed, grid=grid(200),
                                      max_iterations=max_iterations)
    except ConvergenceError as exc:
        return exc.result


@pytest.fixture(scope="session")
def fig1():
    return simple_solution(0.1, 0.0, 0.9)


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, checks: dict[str, bool], detail: str) -> bool:
    ok = all(checks.values())
    failed = [name for name, good in checks.items() if not good]
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    if failed:
        line += f" [failed: {', '.join(failed)}]"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
