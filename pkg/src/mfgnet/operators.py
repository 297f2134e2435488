"""Discrete HJB residual, its Jacobian, and the transposed Fokker-Planck operator.

Row conventions for the ``n = graph.n_dofs`` PDE rows:

* interior node ``k`` of edge ``j``::

      -nu_j (u_{k+1} - 2 u_k + u_{k-1}) / h_j^2 + H_num(x_k, p-, p+) + rho - rhs_k

  with ``p- = (u_k - u_{k-1}) / h_j`` and ``p+ = (u_{k+1} - u_k) / h_j``;
* vertex ``v``::

      (1 / sigma_v) * sum_j [-nu_j d_j u(v) + h_j S_j(q_j)]

  where ``d_j`` is the oriented derivative into edge ``j``, ``sigma_v`` is
  the trapezoid weight of the vertex, ``q_j`` the slope of the first cell of
  edge ``j`` (edge coordinate) and ``S_j`` the branch of the upwind flux that
  belongs to the vertex side of that cell (zero at ``q = 0``).  The ``S``
  term perturbs the Kirchhoff condition by ``O(h)`` only; it supplies the
  advective flux across the first cell once the operator is transposed, so
  that the Fokker-Planck vertex rows are consistent.  The minus sign gives the linearized
  operator nonnegative diagonal and nonpositive off-diagonals (for the
  first-order stencil), i.e. an M-matrix structure, and the ``sigma_v``
  scaling makes the left kernel of that operator equal to ``W m`` with ``W``
  the quadrature weights.

The Fokker-Planck operator is ``A = W^{-1} G^T W`` where ``G = -L_u`` is the
generator of the dual evolution, so ``<A m, w>_W = <m, G w>_W`` exactly and
``1^T W A = 0`` (mass conservation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .graph import START, GridFunction, MetricGraph, oriented_stencil
from .hamiltonian import Hamiltonian

INTERIOR, KIRCHHOFF, FLUX, NORMALIZATION = "interior", "kirchhoff", "flux", "normalization"


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    row_kinds: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


@dataclass(frozen=True)
class ResidualVector:
    values: np.ndarray
    row_kinds: np.ndarray

    @property
    def pde(self) -> np.ndarray:
        return self.values[self.row_kinds != NORMALIZATION]

    @property
    def normalization(self) -> float:
        sel = self.row_kinds == NORMALIZATION
        return float(self.values[sel][0]) if sel.any() else 0.0

    def of_kind(self, kind: str) -> np.ndarray:
        return self.values[self.row_kinds == kind]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _values(g: MetricGraph, f) -> np.ndarray:
    if isinstance(f, GridFunction):
        if f.graph.n_dofs != g.n_dofs:
            raise DimensionMismatch("grid function does not match graph")
        return f.values
    v = np.asarray(f, dtype=float)
    if v.shape != (g.n_dofs,):
        raise DimensionMismatch(f"expected {g.n_dofs} values, got shape {v.shape}")
    return v


def pde_row_kinds(g: MetricGraph, vertex_kind: str = KIRCHHOFF) -> np.ndarray:
    kinds = np.empty(g.n_dofs, dtype=object)
    kinds[: g.n_edge_dofs] = INTERIOR
    kinds[g.n_edge_dofs :] = vertex_kind
    return kinds


def slopes(g: MetricGraph, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward slopes at every interior node."""
    tab = g.interior
    uk = u[: g.n_edge_dofs]
    return (uk - u[tab["left"]]) / tab["h"], (u[tab["right"]] - uk) / tab["h"]


def _vertex_stencils(g: MetricGraph, order: int):
    """Yield (row, cols, coeffs) for the scaled Kirchhoff rows."""
    w = g.weights
    for v in range(g.n_vertices):
        row = g.vertex_dof(v)
        scale = -1.0 / w[row]
        for j, end in g.incidence[v]:
            cols, coef = oriented_stencil(g, v, j, end, order)
            nu = g.edges[j].diffusion
            yield row, cols, [scale * nu * c for c in coef]


def _vertex_faces(g: MetricGraph) -> dict[str, np.ndarray]:
    """One record per (vertex, incident edge): the cell between the vertex and its first node."""
    cache = g.__dict__.setdefault("_face_cache", {})
    if "faces" not in cache:
        rows, near, edge, x, h, scale, backward = [], [], [], [], [], [], []
        w = g.weights
        for v in range(g.n_vertices):
            row = g.vertex_dof(v)
            for j, end in g.incidence[v]:
                e = g.edges[j]
                rows.append(row)
                near.append(g.near_nodes(v, j, end)[0])
                edge.append(j)
                x.append(0.0 if end == START else e.length)
                h.append(e.h)
                scale.append(e.h / w[row])
                # at the edge's end the face lies behind the vertex node
                backward.append(end != START)
        cache["faces"] = {
            "row": np.array(rows, dtype=int),
            "near": np.array(near, dtype=int),
            "edge": np.array(edge, dtype=int),
            "x": np.array(x),
            "h": np.array(h),
            "scale": np.array(scale),
            "backward": np.array(backward, dtype=bool),
        }
    return cache["faces"]


def _face_terms(g: MetricGraph, H: Hamiltonian, u: np.ndarray):
    """Values and slope sensitivities of the vertex half-cell flux terms."""
    fc = _vertex_faces(g)
    sgn = np.where(fc["backward"], 1.0, -1.0)
    q = sgn * (u[fc["row"]] - u[fc["near"]]) / fc["h"]
    val = np.empty(q.size)
    dq = np.empty(q.size)
    for flag in (True, False):
        sel = fc["backward"] == flag
        if sel.any():
            val[sel], dq[sel] = H.one_sided(fc["edge"][sel], fc["x"][sel], q[sel], flag)
    return fc, sgn, val, dq


def pde_residual(
    g: MetricGraph,
    H: Hamiltonian,
    u,
    rho: float,
    rhs,
    lam: float = 0.0,
    vertex_order: int = 1,
) -> np.ndarray:
    """The ``n`` PDE rows (interior equations and scaled Kirchhoff rows)."""
    u = _values(g, u)
    rhs = _values(g, rhs)
    tab = g.interior
    ne = g.n_edge_dofs
    pm, pp = slopes(g, u)
    hnum, _, _ = H.numerical(tab["edge"], tab["x"], pm, pp)
    res = np.empty(g.n_dofs)
    uk = u[:ne]
    res[:ne] = (
        -tab["nu"] * (u[tab["right"]] - 2.0 * uk + u[tab["left"]]) / tab["h"] ** 2
        + hnum
        + rho
        + lam * uk
        - rhs[:ne]
    )
    res[ne:] = 0.0
    for row, cols, coef in _vertex_stencils(g, vertex_order):
        res[row] += np.dot(coef, u[cols])
    fc, _, val, _ = _face_terms(g, H, u)
    np.add.at(res, fc["row"], fc["scale"] * val)
    return res


def pde_jacobian(g: MetricGraph, H: Hamiltonian, u, lam: float = 0.0, vertex_order: int = 1) -> sp.csr_matrix:
    """Jacobian of :func:`pde_residual` with respect to ``u`` (``n x n``)."""
    u = _values(g, u)
    tab = g.interior
    ne = g.n_edge_dofs
    pm, pp = slopes(g, u)
    _, dpm, dpp = H.numerical(tab["edge"], tab["x"], pm, pp)
    h, nu = tab["h"], tab["nu"]
    k = np.arange(ne)
    rows = [k, k, k]
    cols = [k, tab["left"], tab["right"]]
    vals = [
        2.0 * nu / h**2 + (dpm - dpp) / h + lam,
        -nu / h**2 - dpm / h,
        -nu / h**2 + dpp / h,
    ]
    for row, c, coef in _vertex_stencils(g, vertex_order):
        rows.append(np.full(len(c), row))
        cols.append(np.asarray(c))
        vals.append(np.asarray(coef))
    fc, sgn, _, dq = _face_terms(g, H, u)
    d = fc["scale"] * dq * sgn / fc["h"]
    rows += [fc["row"], fc["row"]]
    cols += [fc["row"], fc["near"]]
    vals += [d, -d]
    n = g.n_dofs
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def interior_indicator(g: MetricGraph) -> np.ndarray:
    e = np.zeros(g.n_dofs)
    e[: g.n_edge_dofs] = 1.0
    return e


def assemble_hjb_system(
    g: MetricGraph, H: Hamiltonian, rhs, u, rho: float, vertex_order: int = 1
) -> ResidualVector:
    """Ergodic HJB residual: PDE rows followed by the ``int u = 0`` row."""
    uv = _values(g, u)
    res = pde_residual(g, H, uv, rho, rhs, vertex_order=vertex_order)
    kinds = np.append(pde_row_kinds(g), NORMALIZATION)
    return ResidualVector(np.append(res, g.weights @ uv), kinds)


def assemble_hjb_jacobian(g: MetricGraph, H: Hamiltonian, u, vertex_order: int = 1) -> SparseOperator:
    """Exact Jacobian of :func:`assemble_hjb_system` in the unknowns ``(u, rho)``."""
    J = pde_jacobian(g, H, u, vertex_order=vertex_order)
    e = sp.csr_matrix(interior_indicator(g)[:, None])
    w = sp.csr_matrix(g.weights[None, :])
    full = sp.bmat([[J, e], [w, None]], format="csr")
    return SparseOperator(full, np.append(pde_row_kinds(g), NORMALIZATION))


def linearized_operator(g: MetricGraph, H: Hamiltonian, u, vertex_order: int = 1) -> SparseOperator:
    """``L_u``: the u-block of the HJB Jacobian restricted to the PDE rows."""
    return SparseOperator(pde_jacobian(g, H, u, vertex_order=vertex_order), pde_row_kinds(g))


def dual_generator(g: MetricGraph, H: Hamiltonian, u, vertex_order: int = 1) -> SparseOperator:
    """``G = -L_u``: generator of ``dU/dt = nu U'' - b U'`` with Kirchhoff rows."""
    L = pde_jacobian(g, H, u, vertex_order=vertex_order)
    return SparseOperator((-L).tocsr(), pde_row_kinds(g))


def assemble_fp_operator(g: MetricGraph, H: Hamiltonian, u, vertex_order: int = 1) -> SparseOperator:
    """Stationary Fokker-Planck operator ``A = W^{-1} G^T W``.

    Interior rows discretize ``nu m'' + (a m)'`` with ``a = dH/dp`` in
    divergence form; vertex rows are the induced flux-conservation rows.
    """
    G = pde_jacobian(g, H, u, vertex_order=vertex_order)
    w = g.weights
    A = -(sp.diags(1.0 / w) @ G.T @ sp.diags(w))
    return SparseOperator(A.tocsr(), pde_row_kinds(g, FLUX))


# -- diagnostics ----------------------------------------------------------------


def kirchhoff_sums(g: MetricGraph, u, order: int = 2) -> np.ndarray:
    """Unscaled ``sum_j nu_j d_j u(v)`` at every vertex."""
    uv = _values(g, u)
    out = np.zeros(g.n_vertices)
    for v in range(g.n_vertices):
        for j, end in g.incidence[v]:
            cols, coef = oriented_stencil(g, v, j, end, order)
            out[v] += g.edges[j].diffusion * np.dot(coef, uv[cols])
    return out


def edge_slopes(g: MetricGraph, u: GridFunction, j: int) -> np.ndarray:
    """Derivative of ``u`` along edge ``j`` (edge coordinate) at every node.

    Centered in the interior, second-order one-sided at the endpoints.
    """
    prof = u.edge_profile(j)
    return np.gradient(prof, g.edges[j].h, edge_order=2)


def drift_profiles(g: MetricGraph, H: Hamiltonian, u: GridFunction) -> list[np.ndarray]:
    """``a(x) = dH/dp(x, u')`` on every edge grid (endpoints included).

    Interior nodes use the same upwind sensitivities as the FP operator;
    endpoints use one-sided slopes.  Values are per edge because the drift
    need not be continuous across a vertex.
    """
    tab = g.interior
    pm, pp = slopes(g, u.values)
    _, dpm, dpp = H.numerical(tab["edge"], tab["x"], pm, pp)
    a_int = dpm + dpp
    out = []
    for j, e in enumerate(g.edges):
        sl = g.edge_slice(j)
        du = edge_slopes(g, u, j)
        ends = H.dp(np.array([j, j]), np.array([0.0, e.length]), du[[0, -1]])
        out.append(np.concatenate([[ends[0]], a_int[sl], [ends[1]]]))
    return out


def oriented_sign(end: int) -> float:
    return 1.0 if end == START else -1.0
