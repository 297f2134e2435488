"""Metric graphs, grid functions, quadrature and vertex derivatives.

A metric graph is a set of vertices joined by edges that are intervals
``[0, l_j]`` in arclength.  Every edge carries a uniform grid of ``N_j``
cells; the unknowns of a grid function are the ``N_j - 1`` interior nodes
of each edge plus one value per vertex, so continuity at vertices holds by
construction.

DOF layout: interior nodes of edge 0, interior nodes of edge 1, ..., then
the vertex values in vertex order.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Callable, Hashable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, GraphError

START, END = 0, 1
MIN_CELLS = 4


@dataclass(frozen=True)
class EdgeSpec:
    id: Hashable
    start: Hashable
    end: Hashable
    length: float
    diffusion: float = 1.0
    cells: int = 50


@dataclass(frozen=True)
class GraphSpec:
    vertices: list
    edges: list[EdgeSpec]


@dataclass(frozen=True)
class EdgeRecord:
    id: Hashable
    start: int
    end: int
    length: float
    diffusion: float
    cells: int

    @property
    def h(self) -> float:
        return self.length / self.cells

    @property
    def nodes(self) -> np.ndarray:
        """All grid abscissae including both endpoints (``cells + 1`` values)."""
        return np.linspace(0.0, self.length, self.cells + 1)


@dataclass(frozen=True)
class RoutingTable:
    """Per-vertex routing probabilities over incident edges.

    ``edges[i]`` and ``probs[i]`` are aligned arrays for vertex ``i``.
    """

    edges: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]

    def beta(self, vertex: int, edge: int) -> float:
        hit = np.flatnonzero(self.edges[vertex] == edge)
        if hit.size == 0:
            raise GraphError(f"edge {edge} is not incident to vertex {vertex}")
        return float(self.probs[vertex][hit].sum())


class MetricGraph:
    """Validated network with per-edge grids.

    Use :func:`build_graph` rather than calling the constructor directly.
    """

    def __init__(self, vertex_ids: Sequence[Hashable], edges: Sequence[EdgeRecord]):
        self.vertex_ids = tuple(vertex_ids)
        self.edges = tuple(edges)
        self._vertex_index = {v: i for i, v in enumerate(self.vertex_ids)}
        self._edge_index = {e.id: j for j, e in enumerate(self.edges)}

        inc: list[list[tuple[int, int]]] = [[] for _ in self.vertex_ids]
        for j, e in enumerate(self.edges):
            inc[e.start].append((j, START))
            inc[e.end].append((j, END))
        self.incidence = tuple(tuple(x) for x in inc)

        counts = np.array([e.cells - 1 for e in self.edges], dtype=int)
        self.edge_offsets = np.concatenate([[0], np.cumsum(counts)])
        self.n_edge_dofs = int(self.edge_offsets[-1])
        self.n_dofs = self.n_edge_dofs + len(self.vertex_ids)

        nu = np.array([e.diffusion for e in self.edges])
        routing_edges, routing_probs = [], []
        for i in range(len(self.vertex_ids)):
            js = np.array([j for j, _ in self.incidence[i]], dtype=int)
            routing_edges.append(js)
            routing_probs.append(nu[js] / nu[js].sum())
        self.routing = RoutingTable(tuple(routing_edges), tuple(routing_probs))

    def __repr__(self) -> str:
        return (
            f"MetricGraph(vertices={len(self.vertex_ids)}, edges={len(self.edges)}, "
            f"length={self.total_length:g}, dofs={self.n_dofs})"
        )

    # -- lookups -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex_index(self, vid: Hashable) -> int:
        try:
            return self._vertex_index[vid]
        except KeyError:
            raise GraphError(f"unknown vertex {vid!r}") from None

    def edge_index(self, eid: Hashable) -> int:
        try:
            return self._edge_index[eid]
        except KeyError:
            raise GraphError(f"unknown edge {eid!r}") from None

    def degree(self, i: int) -> int:
        return len(self.incidence[i])

    @cached_property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def vertex_dof(self, i: int) -> int:
        return self.n_edge_dofs + i

    def edge_slice(self, j: int) -> slice:
        return slice(int(self.edge_offsets[j]), int(self.edge_offsets[j + 1]))

    def endpoint_dofs(self, j: int) -> tuple[int, int]:
        e = self.edges[j]
        return self.vertex_dof(e.start), self.vertex_dof(e.end)

    def near_nodes(self, i: int, j: int, end: int) -> tuple[int, int]:
        """DOFs of the first two nodes into edge ``j`` seen from its ``end``."""
        sl = self.edge_slice(j)
        if end == START:
            return sl.start, sl.start + 1
        return sl.stop - 1, sl.stop - 2

    # -- per-node tables used by the assemblers ------------------------------

    @cached_property
    def interior(self) -> dict[str, np.ndarray]:
        """Flat arrays over interior DOFs: edge, x, h, nu, left and right DOF."""
        edge, x, h, nu, left, right = [], [], [], [], [], []
        for j, e in enumerate(self.edges):
            k = np.arange(1, e.cells)
            dofs = self.edge_offsets[j] + k - 1
            lft = dofs - 1
            rgt = dofs + 1
            lft[0] = self.vertex_dof(e.start)
            rgt[-1] = self.vertex_dof(e.end)
            edge.append(np.full(k.size, j))
            x.append(k * e.h)
            h.append(np.full(k.size, e.h))
            nu.append(np.full(k.size, e.diffusion))
            left.append(lft)
            right.append(rgt)
        return {
            "edge": np.concatenate(edge),
            "x": np.concatenate(x),
            "h": np.concatenate(h),
            "nu": np.concatenate(nu),
            "left": np.concatenate(left).astype(int),
            "right": np.concatenate(right).astype(int),
        }

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights over all DOFs."""
        w = np.empty(self.n_dofs)
        w[: self.n_edge_dofs] = self.interior["h"]
        for i in range(self.n_vertices):
            w[self.vertex_dof(i)] = sum(self.edges[j].h for j, _ in self.incidence[i]) / 2
        w.setflags(write=False)
        return w

    def refined(self, factor: int = 2) -> MetricGraph:
        """Same topology with every edge's cell count multiplied by ``factor``."""
        spec = self.to_spec()
        edges = [EdgeSpec(e.id, e.start, e.end, e.length, e.diffusion, e.cells * factor) for e in spec.edges]
        return build_graph(GraphSpec(list(spec.vertices), edges))

    def to_spec(self) -> GraphSpec:
        edges = [
            EdgeSpec(e.id, self.vertex_ids[e.start], self.vertex_ids[e.end], e.length, e.diffusion, e.cells)
            for e in self.edges
        ]
        return GraphSpec(list(self.vertex_ids), edges)


def build_graph(spec: GraphSpec) -> MetricGraph:
    """Validate a :class:`GraphSpec` and derive incidence and routing."""
    vertex_ids = list(spec.vertices)
    if len(set(vertex_ids)) != len(vertex_ids):
        raise GraphError("duplicate vertex id")
    if not spec.edges:
        raise GraphError("graph has no edges")
    vindex = {v: i for i, v in enumerate(vertex_ids)}

    seen: set = set()
    records = []
    for es in spec.edges:
        if es.id in seen:
            raise GraphError(f"duplicate edge id {es.id!r}")
        seen.add(es.id)
        for end in (es.start, es.end):
            if end not in vindex:
                raise GraphError(f"edge {es.id!r} references unknown vertex {end!r}")
        if es.start == es.end:
            raise GraphError(f"edge {es.id!r} is a self-loop; endpoints must be distinct")
        if not es.length > 0:
            raise GraphError(f"edge {es.id!r}: nonpositive length")
        if not es.diffusion > 0:
            raise GraphError(f"edge {es.id!r}: nonpositive diffusion")
        if int(es.cells) != es.cells or es.cells < MIN_CELLS:
            raise GraphError(f"edge {es.id!r}: cells must be an integer >= {MIN_CELLS}")
        records.append(
            EdgeRecord(es.id, vindex[es.start], vindex[es.end], float(es.length), float(es.diffusion), int(es.cells))
        )

    degree = np.zeros(len(vertex_ids), dtype=int)
    adj: list[list[int]] = [[] for _ in vertex_ids]
    for r in records:
        degree[r.start] += 1
        degree[r.end] += 1
        adj[r.start].append(r.end)
        adj[r.end].append(r.start)
    for i, d in enumerate(degree):
        if d < 2:
            raise GraphError(f"vertex {vertex_ids[i]!r} has degree {d}; boundary vertices are not supported")

    reached = {0}
    queue = deque([0])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in reached:
                reached.add(nb)
                queue.append(nb)
    if len(reached) != len(vertex_ids):
        raise GraphError("disconnected graph")

    return MetricGraph(vertex_ids, records)


# -- grid functions ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Continuous scalar field on a metric graph (flat DOF vector)."""

    graph: MetricGraph
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.graph.n_dofs,):
            raise DimensionMismatch(f"expected {self.graph.n_dofs} values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, graph: MetricGraph, c: float) -> GridFunction:
        return cls(graph, np.full(graph.n_dofs, float(c)))

    @classmethod
    def zeros(cls, graph: MetricGraph) -> GridFunction:
        return cls.constant(graph, 0.0)

    @classmethod
    def from_function(cls, graph: MetricGraph, fn: Callable[[int, np.ndarray], np.ndarray]) -> GridFunction:
        """Sample ``fn(edge_index, x)`` on every edge grid.

        ``fn`` must be continuous across vertices; the vertex value is taken
        from the first incident edge.
        """
        vals = np.empty(graph.n_dofs)
        vertex_set = np.zeros(graph.n_vertices, dtype=bool)
        for j, e in enumerate(graph.edges):
            prof = np.asarray(fn(j, e.nodes), dtype=float) * np.ones(e.cells + 1)
            vals[graph.edge_slice(j)] = prof[1:-1]
            for i, k in ((e.start, 0), (e.end, -1)):
                if not vertex_set[i]:
                    vals[graph.vertex_dof(i)] = prof[k]
                    vertex_set[i] = True
        return cls(graph, vals)

    @classmethod
    def from_profiles(cls, graph: MetricGraph, profiles: Sequence[np.ndarray]) -> GridFunction:
        """Build from per-edge nodal arrays of length ``cells + 1``.

        Endpoint values must agree at shared vertices (checked to 1e-12).
        """
        vals = np.empty(graph.n_dofs)
        vertex_vals: list[list[float]] = [[] for _ in range(graph.n_vertices)]
        for j, (e, prof) in enumerate(zip(graph.edges, profiles)):
            prof = np.asarray(prof, dtype=float)
            if prof.shape != (e.cells + 1,):
                raise DimensionMismatch(f"edge {e.id!r}: expected {e.cells + 1} nodal values, got {prof.shape}")
            vals[graph.edge_slice(j)] = prof[1:-1]
            vertex_vals[e.start].append(prof[0])
            vertex_vals[e.end].append(prof[-1])
        for i, vv in enumerate(vertex_vals):
            if np.ptp(vv) > 1e-12 * max(1.0, np.max(np.abs(vv))):
                raise DimensionMismatch(f"profiles disagree at vertex {graph.vertex_ids[i]!r}")
            vals[graph.vertex_dof(i)] = vv[0]
        return cls(graph, vals)

    def edge_values(self, j: int) -> np.ndarray:
        return self.values[self.graph.edge_slice(j)]

    @property
    def vertex_values(self) -> np.ndarray:
        return self.values[self.graph.n_edge_dofs :]

    def edge_profile(self, j: int) -> np.ndarray:
        """Nodal values along edge ``j`` including both endpoint vertices."""
        a, b = self.graph.endpoint_dofs(j)
        return np.concatenate([[self.values[a]], self.edge_values(j), [self.values[b]]])

    def with_values(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.graph, values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.graph is not self.graph:
                raise DimensionMismatch("grid functions live on different graphs")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._other(other))

    def __rsub__(self, other):
        return self.with_values(self._other(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _check(g: MetricGraph, f: GridFunction) -> None:
    if f.graph is not g and f.graph.n_dofs != g.n_dofs:
        raise DimensionMismatch("grid function does not match graph")


def integrate(g: MetricGraph, f: GridFunction) -> float:
    """Composite trapezoidal rule summed over edges."""
    _check(g, f)
    return float(g.weights @ f.values)


def mean(g: MetricGraph, f: GridFunction) -> float:
    return integrate(g, f) / g.total_length


def inner(g: MetricGraph, a: np.ndarray, b: np.ndarray) -> float:
    """Quadrature-weighted inner product of two DOF vectors."""
    return float(np.sum(g.weights * a * b))


def oriented_derivative(g: MetricGraph, f: GridFunction, v: int, j: int, order: int = 2) -> float:
    """Derivative of ``f`` at vertex ``v`` along edge ``j``, pointing into the edge.

    ``order=2`` uses the one-sided three-point stencil, ``order=1`` the
    two-point difference ``(f_1 - f(v)) / h``.
    """
    _check(g, f)
    ends = [end for jj, end in g.incidence[v] if jj == j]
    if not ends:
        raise GraphError(f"edge {j} is not incident to vertex {v}")
    return _oriented(g, f.values, v, j, ends[0], order)


def _oriented(g: MetricGraph, values: np.ndarray, v: int, j: int, end: int, order: int) -> float:
    h = g.edges[j].h
    n1, n2 = g.near_nodes(v, j, end)
    fv = values[g.vertex_dof(v)]
    if order == 1:
        return (values[n1] - fv) / h
    if order == 2:
        return (-3.0 * fv + 4.0 * values[n1] - values[n2]) / (2.0 * h)
    raise ValueError(f"unsupported stencil order {order}")


def oriented_stencil(g: MetricGraph, v: int, j: int, end: int, order: int) -> tuple[list[int], list[float]]:
    """DOFs and coefficients of :func:`oriented_derivative` (for assembly)."""
    h = g.edges[j].h
    n1, n2 = g.near_nodes(v, j, end)
    vd = g.vertex_dof(v)
    if order == 1:
        return [vd, n1], [-1.0 / h, 1.0 / h]
    if order == 2:
        return [vd, n1, n2], [-1.5 / h, 2.0 / h, -0.5 / h]
    raise ValueError(f"unsupported stencil order {order}")


# -- stock topologies ----------------------------------------------------------


def triangle(cells: int = 50, length: float = 1.0, nu: float = 1.0) -> MetricGraph:
    edges = [EdgeSpec(f"e{k}", k, (k + 1) % 3, length, nu, cells) for k in range(3)]
    return build_graph(GraphSpec([0, 1, 2], edges))


def lens(
    cells: int | Sequence[int] = 40,
    lengths: Sequence[float] = (1.0, 1.5, 2.0),
    nus: Sequence[float] = (1.0, 1.0, 1.0),
) -> MetricGraph:
    """Two vertices joined by parallel edges (three by default)."""
    n = len(lengths)
    cells = [cells] * n if np.isscalar(cells) else list(cells)
    edges = [EdgeSpec(f"e{k}", "A", "B", lengths[k], nus[k], cells[k]) for k in range(n)]
    return build_graph(GraphSpec(["A", "B"], edges))


def cycle(n_vertices: int = 2, total_length: float = 1.0, cells: int = 50, nu: float = 1.0) -> MetricGraph:
    """A loop split into ``n_vertices`` equal edges; ``cells`` is the total count.

    Edge ``k`` covers global arclength ``[k L/n, (k+1) L/n]``.
    """
    if cells % n_vertices:
        raise GraphError("total cells must be divisible by the number of vertices")
    ell = total_length / n_vertices
    edges = [EdgeSpec(f"e{k}", k, (k + 1) % n_vertices, ell, nu, cells // n_vertices) for k in range(n_vertices)]
    return build_graph(GraphSpec(list(range(n_vertices)), edges))


def star_with_ring(cells: int = 20) -> MetricGraph:
    """Hub joined to three rim vertices that also form a ring (degrees 3)."""
    edges = [EdgeSpec(f"s{k}", "hub", f"r{k}", 1.0, 1.0 + 0.5 * k, cells) for k in range(3)]
    edges += [EdgeSpec(f"c{k}", f"r{k}", f"r{(k + 1) % 3}", 1.2, 0.8, cells) for k in range(3)]
    return build_graph(GraphSpec(["hub", "r0", "r1", "r2"], edges))
