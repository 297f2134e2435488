import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgnet.graph import GridFunction, lens, star_with_ring, triangle
from mfgnet.hamiltonian import (
    CallbackHamiltonian,
    QuadraticHamiltonian,
    builtin,
    check_convexity,
    check_growth,
    clipped,
    numerical_hamiltonian,
    peclet_check,
    per_edge_constant,
    piecewise,
)
from mfgnet.operators import (
    FLUX,
    INTERIOR,
    KIRCHHOFF,
    NORMALIZATION,
    assemble_fp_operator,
    assemble_hjb_jacobian,
    assemble_hjb_system,
    dual_generator,
    linearized_operator,
    pde_jacobian,
    pde_residual,
)

from .conftest import lens_hamiltonian

GRAPHS = {"triangle": lambda: triangle(12), "lens": lambda: lens(10), "star_ring": lambda: star_with_ring(8)}


def _drift_H(g):
    """Quadratic H with a sign-changing drift coefficient, to exercise both upwind branches."""
    lengths = [e.length for e in g.edges]
    c = piecewise([builtin("sine", lengths, amplitude=1.5, phase=0.3 * j) for j in range(g.n_edges)])
    return QuadraticHamiltonian(per_edge_constant(np.linspace(0.4, 0.9, g.n_edges))(np.arange(g.n_edges), 0.0), c=c)


def _smooth_random(g, rng):
    a, b = rng.standard_normal(2)
    return GridFunction.from_function(g, lambda j, x: a * np.sin(3 * x + j) + b * np.cos(2 * x - j)).values


# -- numerical Hamiltonian ----------------------------------------------------------


def test_numerical_hamiltonian_examples():
    H = QuadraticHamiltonian(0.5)
    assert numerical_hamiltonian(H, 0, 0.3, 0.0, 0.0) == 0.0
    assert numerical_hamiltonian(H, 0, 0.3, 1.0, -1.0) == pytest.approx(1.0)
    assert numerical_hamiltonian(H, 0, 0.3, -1.0, 1.0) == pytest.approx(0.0)


def test_generic_flux_matches_quadratic_closed_form_without_drift():
    # with c != 0 the closed form upwinds the quadratic and linear parts separately,
    # a different (still monotone) flux
    g = lens(10)
    H = lens_hamiltonian()
    generic = CallbackHamiltonian(H.value, H.dp, argmin=None)
    tab = g.interior
    rng = np.random.default_rng(3)
    pm, pp = rng.uniform(-3, 3, (2, tab["x"].size))
    a = H.numerical(tab["edge"], tab["x"], pm, pp)
    b = generic.numerical(tab["edge"], tab["x"], pm, pp)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(
    pm=st.floats(-5, 5),
    pp=st.floats(-5, 5),
    dm=st.floats(0, 2),
    dp=st.floats(0, 2),
    c=st.floats(-2, 2),
)
def test_numerical_hamiltonian_is_monotone(pm, pp, dm, dp, c):
    H = QuadraticHamiltonian(0.5, c=lambda e, x: np.full(np.shape(x), c))
    base = numerical_hamiltonian(H, 0, 0.0, pm, pp)
    # nondecreasing in p-, nonincreasing in p+
    assert numerical_hamiltonian(H, 0, 0.0, pm + dm, pp) >= base - 1e-12
    assert numerical_hamiltonian(H, 0, 0.0, pm, pp + dp) <= base + 1e-12


@settings(max_examples=30, deadline=None)
@given(p=st.floats(-5, 5), c=st.floats(-2, 2))
def test_numerical_hamiltonian_is_consistent(p, c):
    H = QuadraticHamiltonian(0.7, c=lambda e, x: np.full(np.shape(x), c))
    exact = float(H.value(np.array([0]), np.array([0.0]), np.array([p]))[0])
    assert numerical_hamiltonian(H, 0, 0.0, p, p) == pytest.approx(exact, abs=1e-12)


def test_clipped_is_bounded_and_monotone():
    H = clipped(QuadraticHamiltonian(0.5), 2.0)
    tab = lens(10).interior
    p = np.linspace(-50, 50, tab["x"].size)
    assert np.all(np.abs(H.value(tab["edge"], tab["x"], p)) <= 2.0)
    v1 = numerical_hamiltonian(H, 0, 0.0, 1.0, 0.0)
    v2 = numerical_hamiltonian(H, 0, 0.0, 2.0, 0.0)
    assert v2 >= v1


def test_convexity_and_growth_diagnostics():
    g = lens(10)
    H = lens_hamiltonian()
    assert check_convexity(H, g)
    assert check_growth(H, g)
    concave = CallbackHamiltonian(lambda e, x, p: -p**2, lambda e, x, p: -2 * p, argmin=lambda e, x: 0 * x)
    assert not check_convexity(concave, g)


def test_centered_scheme_warns_on_large_peclet():
    g = lens(4)
    H = QuadraticHamiltonian(0.5, c=lambda e, x: np.full(np.shape(x), 20.0), scheme="centered")
    with pytest.warns(RuntimeWarning, match="Peclet"):
        assert not peclet_check(H, g)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert peclet_check(QuadraticHamiltonian(0.5, scheme="centered"), lens(40), slopes_bound=1.0)


# -- HJB residual ---------------------------------------------------------------------


def test_residual_of_exact_zero_solution():
    g = triangle(12)
    H = QuadraticHamiltonian(0.5)
    r = assemble_hjb_system(g, H, np.zeros(g.n_dofs), np.zeros(g.n_dofs), 0.0)
    assert r.sup_norm() == 0.0


def test_residual_constant_shift():
    g = star_with_ring(8)
    H = QuadraticHamiltonian(0.5)
    r = assemble_hjb_system(g, H, np.zeros(g.n_dofs), np.zeros(g.n_dofs), 1.0)
    assert np.all(r.of_kind(INTERIOR) == 1.0)
    assert np.all(r.of_kind(KIRCHHOFF) == 0.0)
    assert r.normalization == 0.0
    assert r.pde.size == g.n_dofs


@pytest.mark.parametrize("name", sorted(GRAPHS))
@pytest.mark.parametrize("vertex_order", [1, 2])
def test_jacobian_matches_finite_differences(name, vertex_order):
    g = GRAPHS[name]()
    H = _drift_H(g)
    rng = np.random.default_rng(7)
    u = _smooth_random(g, rng)
    rho = 0.3
    f = rng.standard_normal(g.n_dofs)

    def F(z):
        return assemble_hjb_system(g, H, f, z[:-1], z[-1], vertex_order=vertex_order).values

    z = np.append(u, rho)
    J = assemble_hjb_jacobian(g, H, u, vertex_order=vertex_order).matrix.toarray()
    eps = 1e-6
    for k in range(z.size):
        e = np.zeros(z.size)
        e[k] = eps
        col = (F(z + e) - F(z - e)) / (2 * eps)
        scale = max(np.max(np.abs(J[:, k])), 1.0)
        assert np.max(np.abs(col - J[:, k])) <= 1e-6 * scale, k


def test_jacobian_at_zero_is_kirchhoff_laplacian():
    g = triangle(10)
    J = pde_jacobian(g, QuadraticHamiltonian(0.5), np.zeros(g.n_dofs)).toarray()
    tab = g.interior
    ne = g.n_edge_dofs
    for k in range(ne):
        h2 = tab["h"][k] ** 2
        assert J[k, k] == pytest.approx(2 * tab["nu"][k] / h2)
        assert J[k, tab["left"][k]] == pytest.approx(-tab["nu"][k] / h2)
        assert J[k, tab["right"][k]] == pytest.approx(-tab["nu"][k] / h2)
    assert np.allclose(J.sum(axis=1), 0.0, atol=1e-9)


def test_linearized_operator_is_m_matrix():
    g = lens(12)
    H = lens_hamiltonian()
    u = _smooth_random(g, np.random.default_rng(1))
    L = linearized_operator(g, H, u).matrix.toarray()
    off = L - np.diag(np.diag(L))
    assert np.all(np.diag(L) > 0)
    assert np.all(off <= 1e-14)
    assert np.allclose(L.sum(axis=1), 0.0, atol=1e-8)


# -- Fokker-Planck operator -----------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_duality_and_mass_conservation(name):
    g = GRAPHS[name]()
    H = _drift_H(g)
    rng = np.random.default_rng(11)
    u = _smooth_random(g, rng)
    A = assemble_fp_operator(g, H, u)
    G = dual_generator(g, H, u)
    w = g.weights
    assert set(A.row_kinds[g.n_edge_dofs :]) == {FLUX}
    for _ in range(100):
        m, phi = rng.standard_normal((2, g.n_dofs))
        lhs = np.dot(w * (A @ m), phi)
        rhs = np.dot(w * m, G @ phi)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)
    colsum = w @ A.matrix.toarray()
    assert np.max(np.abs(colsum)) <= 1e-12 * np.abs(A.matrix).max()


def test_fp_operator_zero_drift_kernel_is_constant():
    g = star_with_ring(10)
    A = assemble_fp_operator(g, QuadraticHamiltonian(0.5), np.zeros(g.n_dofs))
    assert np.max(np.abs(A @ np.ones(g.n_dofs))) < 1e-10


def test_row_kinds():
    g = lens(10)
    J = assemble_hjb_jacobian(g, QuadraticHamiltonian(0.5), np.zeros(g.n_dofs))
    assert J.shape == (g.n_dofs + 1, g.n_dofs + 1)
    assert list(J.row_kinds[-3:]) == [KIRCHHOFF, KIRCHHOFF, NORMALIZATION]


def test_residual_rejects_wrong_shape():
    from mfgnet.errors import DimensionMismatch

    g = lens(10)
    with pytest.raises(DimensionMismatch):
        pde_residual(g, QuadraticHamiltonian(0.5), np.zeros(3), 0.0, np.zeros(g.n_dofs))
