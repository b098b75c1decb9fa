import math

import pytest

from fracrobin import cs_extension as cx
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis

HALF_PI = math.pi / 2
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def square():
    domain, grid = build_domain(DomainSpec("rectangle", (HALF_PI, HALF_PI), math.pi / 64))
    return domain, grid, eigenbasis(domain, grid, 400)


@pytest.fixture(scope="session")
def rectangle():
    domain, grid = build_domain(DomainSpec("rectangle", (HALF_PI, HALF_PI / 2), math.pi / 128))
    return domain, grid, eigenbasis(domain, grid, 400)


@pytest.fixture(scope="session")
def ellipse():
    domain, grid = build_domain(DomainSpec("ellipse", (1.0, 0.6), 1 / 32))
    return domain, grid, eigenbasis(domain, grid, 20)


@pytest.fixture(scope="session")
def cylinders(square):
    _, grid, basis = square
    return {s: cx.make_cylinder(grid, basis.lambda_1, K=256, gamma=2.0, s=s) for s in (0.3, 0.5, 0.7)}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
