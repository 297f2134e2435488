import numpy as np
import pytest

from mfgnet.graph import lens, triangle
from mfgnet.hamiltonian import QuadraticHamiltonian, builtin, piecewise
from mfgnet.mfg import MFGConfig, power_coupling, solve_mfg

LENS_LENGTHS = (1.0, 1.5, 2.0)


def lens_hamiltonian(lengths=LENS_LENGTHS, amplitude=1.0):
    """Quadratic H with an edge-dependent potential folded in."""
    f0 = piecewise(
        [
            builtin("sine", lengths, amplitude=0.5 * amplitude),
            builtin("bump", lengths, amplitude=-amplitude, width=0.15),
            None,
        ]
    )
    return QuadraticHamiltonian(0.5, f0=f0)


@pytest.fixture(scope="session")
def tri():
    return triangle(50)


@pytest.fixture(scope="session")
def lens_graph():
    return lens(40)


@pytest.fixture(scope="session")
def lens_H():
    return lens_hamiltonian()


@pytest.fixture(scope="session")
def lens_solution(lens_graph, lens_H):
    return solve_mfg(lens_graph, lens_H, power_coupling(2.0), MFGConfig(fp_tol=1e-11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[k])
