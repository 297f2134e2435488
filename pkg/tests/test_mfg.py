import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgnet.errors import MfgNetError, NonConvergence
from mfgnet.graph import GridFunction, integrate, lens, star_with_ring, triangle
from mfgnet.hamiltonian import QuadraticHamiltonian
from mfgnet.hjb import rho_bound
from mfgnet.mfg import (
    AUDIT_KEYS,
    CouplingSpec,
    MFGConfig,
    MFGSolution,
    apply_T,
    audit_passes,
    energy_identity_gap,
    power_coupling,
    solve_mfg,
)

HALF = QuadraticHamiltonian(0.5)


def bump_density(g, edge=0, width=0.1):
    mu = GridFunction.from_function(
        g, lambda j, x: (j == edge) * np.exp(-((x / g.edges[j].length - 0.5) / width) ** 2) + 1e-3
    )
    return mu * (1 / integrate(g, mu))


def test_apply_T_uniform_is_fixed():
    g = triangle(30)
    u, rho, m = apply_T(g, HALF, power_coupling(1.0), GridFunction.constant(g, 1 / 3))
    assert u.sup() < 1e-12
    assert rho == pytest.approx(1 / 3, abs=1e-12)
    assert np.max(np.abs(m.values - 1 / 3)) < 1e-12


def test_apply_T_bump_respects_rho_bound():
    g = star_with_ring(12)
    V = power_coupling(1.0)
    mu = bump_density(g, 2)
    _, rho, _ = apply_T(g, HALF, V, mu)
    assert rho <= np.max(V(mu.values)) + 1e-10
    assert abs(rho) <= rho_bound(g, HALF, V(mu.values)) + 1e-10


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 5.0))
def test_apply_T_output_is_a_density(seed, scale):
    g = lens(12)
    rng = np.random.default_rng(seed)
    mu = GridFunction(g, rng.uniform(0, scale, g.n_dofs))
    mu = mu * (1 / integrate(g, mu))
    _, _, m = apply_T(g, HALF, power_coupling(2.0), mu)
    assert m.values.min() > 0
    assert abs(integrate(g, m) - 1) < 1e-12


def test_triangle_exact_solution():
    g = triangle(50)
    t0 = time.perf_counter()
    sol = solve_mfg(g, HALF, power_coupling(1.0))
    assert time.perf_counter() - t0 < 1.0
    assert sol.u.sup() < 1e-8
    assert np.max(np.abs(sol.m.values - 1 / 3)) < 1e-8
    assert sol.rho == pytest.approx(1 / 3, abs=1e-8)
    assert audit_passes(sol.audit, 1e-8)


def test_triangle_from_concentrated_start():
    g = triangle(50)
    sol = solve_mfg(g, HALF, power_coupling(1.0), MFGConfig(initial_density=bump_density(g)))
    assert sol.u.sup() < 1e-6
    assert np.max(np.abs(sol.m.values - 1 / 3)) < 1e-6
    assert sol.rho == pytest.approx(1 / 3, abs=1e-6)
    assert len(sol.history) == sol.fixed_point_iters


def test_lens_audit_and_baseline(lens_graph, lens_H, lens_solution):
    sol = lens_solution
    for key in AUDIT_KEYS:
        assert sol.audit[key] < 1e-8, key
    assert sol.audit["min_m"] > 0
    # regression baseline for this discretization (N = 40 per edge)
    assert sol.rho == pytest.approx(0.136042593104, abs=1e-9)


def test_energy_identity_same_solution(lens_graph, lens_H, lens_solution):
    rep = energy_identity_gap(lens_graph, lens_H, power_coupling(2.0), lens_solution, lens_solution)
    assert rep.coupling == 0 and rep.bregman_1 == 0 and rep.bregman_2 == 0 and rep.vertex_defect == 0


def test_energy_identity_two_runs(lens_graph, lens_H, lens_solution):
    V = power_coupling(2.0)
    other = solve_mfg(lens_graph, lens_H, V, MFGConfig(fp_tol=1e-11, initial_density=bump_density(lens_graph, 1)))
    rep = energy_identity_gap(lens_graph, lens_H, V, lens_solution, other)
    assert abs(rep.total) < 1e-8
    assert min(rep.coupling, rep.bregman_1, rep.bregman_2) >= -1e-10
    assert abs(rep.identity_gap) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), amp=st.floats(0.05, 2.0))
def test_bregman_terms_positive_under_perturbation(lens_graph, lens_H, lens_solution, seed, amp):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(1, 4, 2)
    pert = GridFunction.from_function(lens_graph, lambda j, x: amp * np.sin(a * x + b * j))
    sol = lens_solution
    other = MFGSolution(sol.u + pert, sol.m, sol.rho, 0, 0.0)
    rep = energy_identity_gap(lens_graph, lens_H, power_coupling(2.0), sol, other)
    assert rep.bregman_1 > 0 and rep.bregman_2 > 0


def test_non_monotone_coupling_flagged():
    V = power_coupling(1.0, scale=-1.0)
    assert not V.check_monotone()
    assert power_coupling(2.0).check_monotone()
    lin = CouplingSpec(lambda m: m - m**2, lambda m: 1 - 2 * m)
    assert not lin.check_monotone(m_max=2.0)


def test_nonconvergence_carries_history():
    g = lens(20)
    H = QuadraticHamiltonian(0.5, f0=lambda e, x: np.sin(3 * x + e))
    with pytest.raises(NonConvergence) as info:
        solve_mfg(g, H, power_coupling(1.0, scale=5.0), MFGConfig(max_outer_iters=3))
    assert len(info.value.history) == 3


def test_errors_are_tagged_with_stage():
    g = lens(4)
    lengths = np.array([1.0, 1.5, 2.0])
    H = QuadraticHamiltonian(0.5, c=lambda e, x: 20 * np.sin(2 * np.pi * x / lengths[e]), scheme="centered")
    with pytest.raises(MfgNetError) as info:
        apply_T(g, H, power_coupling(1.0), GridFunction.constant(g, 1 / 4.5))
    assert info.value.stage in ("hjb", "fp")


def test_config_validation():
    with pytest.raises(ValueError):
        MFGConfig(damping=0.0)
    with pytest.raises(ValueError):
        MFGConfig(fp_tol=0.0)
    with pytest.raises(ValueError):
        solve_mfg(triangle(10), HALF, power_coupling(1.0), MFGConfig(initial_density="peaked"))
