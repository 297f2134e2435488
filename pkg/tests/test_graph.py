import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgnet.errors import DimensionMismatch, GraphError
from mfgnet.graph import (
    EdgeSpec,
    GraphSpec,
    GridFunction,
    build_graph,
    cycle,
    integrate,
    lens,
    oriented_derivative,
    star_with_ring,
    triangle,
)


def test_triangle_structure():
    g = triangle(10)
    assert g.n_vertices == 3 and g.n_edges == 3
    assert g.total_length == pytest.approx(3.0)
    assert all(g.degree(i) == 2 for i in range(3))
    for v in range(3):
        assert np.allclose(g.routing.probs[v], 0.5)


def test_dof_count_matches_layout():
    g = star_with_ring(12)
    assert g.n_dofs == sum(e.cells - 1 for e in g.edges) + g.n_vertices
    assert g.weights.sum() == pytest.approx(g.total_length)


def test_parallel_edges_routing():
    g = lens(10, lengths=(1.0, 1.0, 1.0), nus=(1.0, 2.0, 3.0))
    for v in range(2):
        assert np.allclose(g.routing.probs[v], [1 / 6, 2 / 6, 3 / 6])
        assert g.routing.beta(v, 2) == pytest.approx(0.5)


def _spec(**over):
    e = dict(id="a", start=0, end=1, length=1.0, diffusion=1.0, cells=10)
    e.update(over)
    return GraphSpec([0, 1], [EdgeSpec(**e), EdgeSpec("b", 1, 0, 1.0, 1.0, 10)])


@pytest.mark.parametrize(
    "over,msg",
    [
        ({"length": 0.0}, "nonpositive length"),
        ({"diffusion": -1.0}, "nonpositive diffusion"),
        ({"end": 0}, "self-loop"),
        ({"end": 7}, "unknown vertex"),
        ({"cells": 2}, "cells"),
    ],
)
def test_build_graph_validation(over, msg):
    with pytest.raises(GraphError, match=msg):
        build_graph(_spec(**over))


def test_boundary_vertex_rejected():
    spec = GraphSpec([0, 1, 2], [EdgeSpec("a", 0, 1, 1.0), EdgeSpec("b", 1, 2, 1.0), EdgeSpec("c", 0, 1, 1.0)])
    with pytest.raises(GraphError, match="degree"):
        build_graph(spec)


def test_disconnected_rejected():
    edges = [EdgeSpec("a", 0, 1, 1.0), EdgeSpec("b", 1, 0, 1.0), EdgeSpec("c", 2, 3, 1.0), EdgeSpec("d", 3, 2, 1.0)]
    with pytest.raises(GraphError, match="connected"):
        build_graph(GraphSpec([0, 1, 2, 3], edges))


def test_duplicate_edge_id_rejected():
    edges = [EdgeSpec("a", 0, 1, 1.0), EdgeSpec("a", 1, 0, 1.0)]
    with pytest.raises(GraphError, match="duplicate"):
        build_graph(GraphSpec([0, 1], edges))


def test_integrate_constants():
    g = triangle(10)
    assert integrate(g, GridFunction.constant(g, 1.0)) == pytest.approx(3.0, abs=1e-14)
    g2 = star_with_ring(8)
    assert integrate(g2, GridFunction.constant(g2, 2.5)) == pytest.approx(2.5 * g2.total_length, rel=1e-14)


def test_integrate_linear_on_loop():
    # x is discontinuous where the loop closes; trapezoid with the averaged
    # vertex value integrates it exactly
    g = cycle(2, 1.0, 100)
    f = GridFunction.from_function(g, lambda j, x: x + 0.5 * j)
    vals = f.values.copy()
    vals[g.vertex_dof(0)] = 0.5
    assert integrate(g, f.with_values(vals)) == pytest.approx(0.5, abs=1e-12)


def test_integrate_tent_on_loop():
    g = cycle(2, 1.0, 100)
    tent = GridFunction.from_function(g, lambda j, x: (x if j == 0 else 0.5 - x) * np.ones_like(x))
    assert integrate(g, tent) == pytest.approx(0.25, abs=1e-14)


def test_oriented_derivative_constant_and_linear():
    g = lens(10, lengths=(1.0, 2.0, 3.0))
    c = GridFunction.constant(g, 4.0)
    assert oriented_derivative(g, c, 0, 1) == pytest.approx(0.0, abs=1e-12)
    # x - l/2 on every edge: continuous (values -l/2, l/2 differ) only per edge, so use a single edge check
    s = 0.7
    f = GridFunction.from_function(g, lambda j, x: s * x if j == 0 else s * (1.0 - x / g.edges[j].length))
    assert oriented_derivative(g, f, 0, 0) == pytest.approx(s, rel=1e-12)
    # into the edge from its end vertex the slope flips
    assert oriented_derivative(g, f, 1, 0) == pytest.approx(-s, rel=1e-12)


def test_oriented_derivative_quadratic_is_second_order():
    errs = []
    for n in (10, 20, 40):
        g = lens(n, lengths=(1.0, 1.0, 1.0))
        f = GridFunction.from_function(g, lambda j, x: x**2 if j == 0 else x * (1.0 - x) + x)
        errs.append(abs(oriented_derivative(g, f, 0, 0)))
    assert errs[0] < 1e-12  # three-point stencil is exact on quadratics
    assert max(errs) < 1e-10


def test_grid_function_shape_checked():
    g = triangle(10)
    with pytest.raises(DimensionMismatch):
        GridFunction(g, np.zeros(g.n_dofs + 1))
    with pytest.raises(DimensionMismatch):
        integrate(triangle(12), GridFunction.zeros(g))


def test_edge_profile_shares_vertex_values():
    g = star_with_ring(8)
    f = GridFunction(g, np.arange(g.n_dofs, dtype=float))
    for j, e in enumerate(g.edges):
        p = f.edge_profile(j)
        assert p[0] == f.values[g.vertex_dof(e.start)]
        assert p[-1] == f.values[g.vertex_dof(e.end)]


def test_refined_keeps_topology():
    g = lens(10)
    r = g.refined(2)
    assert [e.cells for e in r.edges] == [20, 20, 20]
    assert r.total_length == pytest.approx(g.total_length)


@settings(max_examples=30, deadline=None)
@given(
    lengths=st.lists(st.floats(0.3, 3.0), min_size=2, max_size=4),
    a=st.floats(-5, 5),
    b=st.floats(-5, 5),
)
def test_integrate_is_linear_and_exact_on_constants(lengths, a, b):
    g = lens(8, lengths=lengths, nus=[1.0] * len(lengths))
    rng = np.random.default_rng(0)
    f = GridFunction(g, rng.standard_normal(g.n_dofs))
    h = GridFunction(g, rng.standard_normal(g.n_dofs))
    lhs = integrate(g, f * a + h * b)
    assert lhs == pytest.approx(a * integrate(g, f) + b * integrate(g, h), abs=1e-10)
    assert integrate(g, GridFunction.constant(g, a)) == pytest.approx(a * sum(lengths), abs=1e-10)
