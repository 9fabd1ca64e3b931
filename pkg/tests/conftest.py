import numpy as np
import pytest

from satwave.elliptic import assemble_operators
from satwave.mesh import build_annulus_mesh, build_unit_square_mesh

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def square8():
    return assemble_operators(build_unit_square_mesh(8))


@pytest.fixture(scope="session")
def square16():
    return assemble_operators(build_unit_square_mesh(16))


@pytest.fixture(scope="session")
def square32():
    return assemble_operators(build_unit_square_mesh(32))


@pytest.fixture(scope="session")
def annulus_coarse():
    return assemble_operators(build_annulus_mesh(0.5, 1.0, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def sine_mode(ops, m=1, n=1):
    return ops.interpolate(lambda x, y: np.sin(m * np.pi * x) * np.sin(n * np.pi * y))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
