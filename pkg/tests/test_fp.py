import numpy as np
import pytest
import scipy.linalg as sla

from mfgnet.errors import NonPositiveDensity, NumericallySingular
from mfgnet.fp import (
    FpConfig,
    ParabolicConfig,
    evolve_density,
    evolve_dual,
    flux_residual,
    pairing,
    solve_stationary_fp,
)
from mfgnet.graph import GridFunction, cycle, integrate, lens, star_with_ring, triangle
from mfgnet.hamiltonian import QuadraticHamiltonian
from mfgnet.hjb import solve_ergodic
from mfgnet.mfg import MFGConfig, power_coupling, solve_mfg
from mfgnet.operators import SparseOperator, assemble_fp_operator

from .conftest import lens_hamiltonian

HALF = QuadraticHamiltonian(0.5)


def _lens_instance(n=30, nu=1.0):
    g = lens(n, nus=(nu,) * 3)
    H = lens_hamiltonian()
    f = GridFunction.from_function(g, lambda j, x: np.cos(2 * x + j))
    return g, H, solve_ergodic(g, H, f).u


def test_zero_drift_triangle_is_uniform():
    g = triangle(50)
    A = assemble_fp_operator(g, HALF, np.zeros(g.n_dofs))
    res = solve_stationary_fp(g, A)
    assert np.max(np.abs(res.m.values - 1 / 3)) < 1e-12
    assert res.min_value > 0
    assert abs(integrate(g, res.m) - 1) < 1e-12


def test_constant_drift_on_loop_is_uniform():
    g = cycle(3, 1.5, 60)
    H = QuadraticHamiltonian(0.5, c=lambda e, x: np.full(np.shape(x), 0.8))
    res = solve_stationary_fp(g, assemble_fp_operator(g, H, np.zeros(g.n_dofs)))
    assert np.max(np.abs(res.m.values - 1 / 1.5)) < 1e-12


def test_matches_dense_null_space():
    g, H, u = _lens_instance(30)
    assert g.n_dofs <= 300
    A = assemble_fp_operator(g, H, u)
    res = solve_stationary_fp(g, A)
    ker = sla.null_space(A.matrix.toarray(), rcond=1e-10)
    assert ker.shape[1] == 1
    ref = ker[:, 0] / (g.weights @ ker[:, 0])
    assert np.max(np.abs(res.m.values - ref)) < 1e-10


def test_kernel_is_one_dimensional():
    g, H, u = _lens_instance(20)
    s = np.linalg.svd(assemble_fp_operator(g, H, u).matrix.toarray(), compute_uv=False)
    assert s[-1] < 1e-10 * s[0]
    assert s[-2] > 1e-6 * s[0]


def test_singular_operator_detected():
    g = lens(10)
    A = SparseOperator(assemble_fp_operator(g, HALF, np.zeros(g.n_dofs)).matrix * 0.0, None)
    with pytest.raises(NumericallySingular):
        solve_stationary_fp(g, A)


def test_non_monotone_scheme_gives_fatal_negative_density():
    g = lens(4)
    lengths = np.array([1.0, 1.5, 2.0])
    H = QuadraticHamiltonian(0.5, c=lambda e, x: 20 * np.sin(2 * np.pi * x / lengths[e]), scheme="centered")
    with pytest.raises(NonPositiveDensity):
        solve_stationary_fp(g, assemble_fp_operator(g, H, np.zeros(g.n_dofs)))


# -- dual evolution -------------------------------------------------------------------


def test_dual_preserves_constants():
    g, H, u = _lens_instance(20)
    U = evolve_dual(g, H, u, GridFunction.constant(g, 2.5), ParabolicConfig(dt=0.1, t_final=1.0))
    assert np.max(np.abs(U.values - 2.5)) < 1e-12


def test_dual_positivity():
    g, H, u = _lens_instance(20)
    phi = np.zeros(g.n_dofs)
    start = g.edge_slice(1).start
    phi[start + 3 : start + 6] = 1.0
    U = evolve_dual(g, H, u, GridFunction(g, phi), ParabolicConfig(dt=0.05, t_final=1.0))
    assert U.values.min() > 0


def test_dual_long_time_limit_and_invariance():
    g, H, u = _lens_instance(30, nu=0.2)
    m = solve_stationary_fp(g, assemble_fp_operator(g, H, u)).m
    phi = GridFunction(g, np.random.default_rng(4).uniform(0, 1, g.n_dofs))
    xi = pairing(g, phi, m)
    hist = []
    errs = {}
    for T in (10.0, 50.0):
        U = evolve_dual(g, H, u, phi, ParabolicConfig(dt=0.05, t_final=T), history=hist if T == 10 else None)
        errs[T] = np.max(np.abs(U.values - xi))
    assert errs[10.0] > 1e-8
    assert errs[50.0] <= 0.1 * errs[10.0]
    # int U(t) m is conserved along the evolution
    for _, Ut in hist[::20]:
        assert pairing(g, GridFunction(g, Ut), m) == pytest.approx(xi, abs=1e-11)


def test_density_evolution_conserves_mass():
    g, H, u = _lens_instance(20)
    A = assemble_fp_operator(g, H, u)
    m0 = GridFunction.from_function(g, lambda j, x: (j == 0) * np.exp(-((x - 0.5) / 0.1) ** 2) + 0.01)
    m0 = m0 * (1 / integrate(g, m0))
    hist = []
    mT = evolve_density(g, A, m0, ParabolicConfig(dt=0.1, t_final=30.0), history=hist)
    masses = [integrate(g, GridFunction(g, x)) for _, x in hist]
    assert np.max(np.abs(np.diff(masses))) < 1e-12
    assert np.max(np.abs(mT.values - solve_stationary_fp(g, A).m.values)) < 1e-4


def test_parabolic_config_validation():
    with pytest.raises(ValueError):
        ParabolicConfig(dt=2.0, t_final=1.0)
    with pytest.raises(ValueError):
        ParabolicConfig(dt=-1.0)
    with pytest.raises(ValueError):
        ParabolicConfig(stepper="rk4")


# -- literal flux diagnostic ----------------------------------------------------------


def test_flux_residual_zero_drift_constant_density():
    g = star_with_ring(10)
    m = GridFunction.constant(g, 1 / g.total_length)
    assert np.max(np.abs(flux_residual(g, HALF, GridFunction.zeros(g), m))) < 1e-12


def _lens_mfg(n):
    g = lens(n)
    H = lens_hamiltonian()
    return g, H, solve_mfg(g, H, power_coupling(2.0), MFGConfig(fp_tol=1e-11))


def test_flux_residual_decreases_under_refinement():
    vals = []
    for n in (20, 40, 80):
        g, H, sol = _lens_mfg(n)
        vals.append(np.max(np.abs(flux_residual(g, H, sol.u, sol.m))))
    assert vals[1] <= 0.75 * vals[0]
    assert vals[2] <= 0.75 * vals[1]


def test_flux_residual_flags_perturbed_density(lens_graph, lens_H, lens_solution):
    g = lens_graph
    sol = lens_solution
    bump = GridFunction.from_function(g, lambda j, x: (j == 0) * np.exp(-((x / 0.1) ** 2)))
    base = np.max(np.abs(flux_residual(g, lens_H, sol.u, sol.m)))
    bad = np.max(np.abs(flux_residual(g, lens_H, sol.u, sol.m + bump * 0.2)))
    assert base < 1e-3
    assert bad > 0.5
