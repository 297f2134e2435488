"""Monte Carlo simulation of the controlled diffusion on a network.

Inside edge ``j`` agents follow ``dX = -a(X) dt + sqrt(2 nu_j) dW``.  On
crossing a vertex the leftover displacement is re-injected into an incident
edge ``k`` drawn with probability proportional to ``beta_k / sqrt(nu_k)``,
scaled by ``sqrt(nu_k / nu_j)``.  In the coordinates ``x / sqrt(nu)`` this is
a Walsh-type process, and the selection law makes ``beta`` the probability
of leaving a small ball around the vertex through edge ``k``; with
``beta ~ nu`` the vertex condition is ``sum nu_j d_j f = 0`` and the
invariant law solves ``nu m'' + (a m)' = 0`` with continuous ``m``.  For
equal diffusions selection and routing probabilities coincide.

Random numbers come from a Philox (counter-based) generator seeded with an
explicit 64-bit integer; normals use numpy's ziggurat transform.  All
agents are advanced together, so results depend only on the seed.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatch
from .graph import START, GridFunction, MetricGraph, RoutingTable


@dataclass
class OccupationHistogram:
    counts: list[np.ndarray]  # per edge, one bin per grid cell
    total_samples: int
    elapsed_time: float
    crossings: list[np.ndarray]  # per vertex, aligned with routing.edges[v]
    cell_widths: tuple[float, ...]
    exits: list[np.ndarray] | None = None  # first exits to distance exit_radius, same alignment
    selection: list[np.ndarray] | None = None  # per-crossing selection law used

    def density(self) -> list[np.ndarray]:
        """Counts normalized to a piecewise-constant density on the cells."""
        return [c / (self.total_samples * h) for c, h in zip(self.counts, self.cell_widths)]

    def mass(self) -> float:
        return float(sum(np.sum(d) * h for d, h in zip(self.density(), self.cell_widths)))


def _drift_table(g: MetricGraph, drift) -> list[np.ndarray] | None:
    if drift is None:
        return [np.zeros(e.cells + 1) for e in g.edges]
    if isinstance(drift, GridFunction):
        return [drift.edge_profile(j) for j in range(g.n_edges)]
    if callable(drift):
        return None
    prof = [np.asarray(d, dtype=float) for d in drift]
    for e, d in zip(g.edges, prof):
        if d.shape != (e.cells + 1,):
            raise DimensionMismatch(f"edge {e.id!r}: drift needs {e.cells + 1} nodal values")
    return prof


def simulate(
    g: MetricGraph,
    drift: Sequence[np.ndarray] | GridFunction | Callable | None,
    routing: RoutingTable | None = None,
    n_agents: int = 10_000,
    n_steps: int = 10_000,
    dt: float = 1e-3,
    seed: int = 0,
    burn_in: float = 0.2,
    exit_radius: float | None = None,
) -> OccupationHistogram:
    """Run the agents and accumulate the occupation histogram.

    ``drift`` is per-edge nodal values (linearly interpolated), a
    ``GridFunction``, a callable ``a(edge_idx, x)``, or ``None`` for zero.
    Raises ``ValueError`` if one step could move an agent farther than half
    the shortest edge: ``|a|_max dt + 3 sqrt(2 nu_max dt) < min_j l_j / 2``.

    ``crossings`` tallies the edge drawn at each vertex crossing;
    ``exits`` tallies, for each visit to a vertex, the edge along which the
    agent first gets ``exit_radius`` away from it (default a quarter of the
    shortest edge).  The latter estimates ``beta``.
    """
    routing = routing or g.routing
    lengths = np.array([e.length for e in g.edges])
    nus = np.array([e.diffusion for e in g.edges])
    hs = np.array([e.h for e in g.edges])
    cells = np.array([e.cells for e in g.edges])
    starts = np.array([e.start for e in g.edges])
    ends = np.array([e.end for e in g.edges])

    table = _drift_table(g, drift)
    if table is not None:
        amax = max(float(np.max(np.abs(t))) for t in table)
        node_off = np.concatenate([[0], np.cumsum(cells + 1)])
        flat = np.concatenate(table)

        def drift_at(edge, x):
            s = x / hs[edge]
            k = np.minimum(np.floor(s).astype(int), cells[edge] - 1)
            t = s - k
            base = node_off[edge] + k
            return (1 - t) * flat[base] + t * flat[base + 1]
    else:
        xs = np.concatenate([e.nodes for e in g.edges])
        es = np.concatenate([np.full(e.cells + 1, j) for j, e in enumerate(g.edges)])
        amax = float(np.max(np.abs(drift(es, xs))))
        drift_at = drift

    if not amax * dt + 3.0 * np.sqrt(2.0 * nus.max() * dt) < lengths.min() / 2:
        raise ValueError("dt too large: per-step displacement must stay below half the shortest edge")

    # selection law padded to the max degree
    deg = max(len(r) for r in routing.edges)
    nv = len(routing.edges)
    cum = np.ones((nv, deg))
    redges = np.zeros((nv, deg), dtype=int)
    slot = np.zeros((nv, g.n_edges), dtype=int)
    selection = []
    for v in range(nv):
        k = len(routing.edges[v])
        sel = np.asarray(routing.probs[v]) / np.sqrt(nus[list(routing.edges[v])])
        sel = sel / sel.sum()
        selection.append(sel)
        cum[v, :k] = np.cumsum(sel)
        cum[v, k - 1] = 1.0
        redges[v, :k] = routing.edges[v]
        redges[v, k:] = routing.edges[v][-1]
        slot[v, list(routing.edges[v])] = np.arange(k)
    crossings = np.zeros((nv, deg), dtype=np.int64)
    exits = np.zeros((nv, deg), dtype=np.int64)
    radius = lengths.min() / 4 if exit_radius is None else float(exit_radius)
    if not 0 < radius < lengths.min() / 2:
        raise ValueError("exit_radius must lie in (0, min length / 2)")

    rng = np.random.Generator(np.random.Philox(seed))
    # uniform initial law over the network by length
    edge = rng.choice(g.n_edges, size=n_agents, p=lengths / lengths.sum())
    x = rng.uniform(0.0, 1.0, n_agents) * lengths[edge]

    cell_off = np.concatenate([[0], np.cumsum(cells)])
    hist = np.zeros(int(cell_off[-1]), dtype=np.int64)
    first = int(np.floor(burn_in * n_steps))
    sq = np.sqrt(2.0 * nus * dt)
    pending = np.full(n_agents, -1)  # vertex whose exit is being tracked

    for step in range(n_steps):
        x = x - drift_at(edge, x) * dt + sq[edge] * rng.standard_normal(n_agents)
        out = np.flatnonzero((x < 0.0) | (x > lengths[edge]))
        while out.size:
            e_old = edge[out]
            low = x[out] < 0.0
            vert = np.where(low, starts[e_old], ends[e_old])
            over = np.where(low, -x[out], x[out] - lengths[e_old])
            pick = (rng.uniform(size=out.size)[:, None] >= cum[vert]).sum(axis=1)
            pick = np.minimum(pick, deg - 1)
            e_new = redges[vert, pick]
            np.add.at(crossings, (vert, pick), 1)
            into_start = starts[e_new] == vert
            over = over * np.sqrt(nus[e_new] / nus[e_old])
            # a vertex is both ends of an edge only for self-loops, which are excluded
            x[out] = np.where(into_start, over, lengths[e_new] - over)
            edge[out] = e_new
            pending[out] = vert
            sub = (x[out] < 0.0) | (x[out] > lengths[e_new])
            out = out[sub]
        track = np.flatnonzero(pending >= 0)
        if track.size:
            pv, pe = pending[track], edge[track]
            dist = np.where(starts[pe] == pv, x[track], lengths[pe] - x[track])
            done = dist > radius
            np.add.at(exits, (pv[done], slot[pv[done], pe[done]]), 1)
            pending[track[done]] = -1
        if step >= first:
            k = np.minimum((x / hs[edge]).astype(int), cells[edge] - 1)
            hist += np.bincount(cell_off[edge] + k, minlength=hist.size)

    counts = [hist[cell_off[j] : cell_off[j + 1]].astype(float) for j in range(g.n_edges)]
    cross = [crossings[v, : len(routing.edges[v])].copy() for v in range(nv)]
    ex = [exits[v, : len(routing.edges[v])].copy() for v in range(nv)]
    return OccupationHistogram(
        counts=counts,
        total_samples=int(hist.sum()),
        elapsed_time=(n_steps - first) * dt,
        crossings=cross,
        cell_widths=tuple(float(h) for h in hs),
        exits=ex,
        selection=selection,
    )


def cell_averages(m: GridFunction) -> list[np.ndarray]:
    g = m.graph
    out = []
    for j in range(g.n_edges):
        p = m.edge_profile(j)
        out.append(0.5 * (p[:-1] + p[1:]))
    return out


def compare_histogram(hist: OccupationHistogram, m: GridFunction) -> float:
    """L1 distance on the network between the normalized histogram and ``m``'s cell averages."""
    avgs = cell_averages(m)
    dens = hist.density()
    if len(avgs) != len(dens) or any(a.shape != d.shape for a, d in zip(avgs, dens)):
        raise DimensionMismatch("histogram binning does not match the grid of m")
    return float(sum(h * np.sum(np.abs(d - a)) for d, a, h in zip(dens, avgs, hist.cell_widths)))


def routing_pvalues(hist: OccupationHistogram, routing: RoutingTable, tally: str = "crossings") -> list[float]:
    """Chi-square goodness-of-fit p-value per vertex.

    ``tally="crossings"`` tests the per-crossing draws against the selection
    law (equal to ``beta`` when the incident diffusions agree);
    ``tally="exits"`` tests the exit tallies against ``routing.probs``.
    """
    if tally == "crossings":
        observed = hist.crossings
        probs = hist.selection if hist.selection is not None else routing.probs
    elif tally == "exits":
        observed, probs = hist.exits, routing.probs
    else:
        raise ValueError(f"unknown tally {tally!r}")
    out = []
    for v, obs in enumerate(observed):
        n = obs.sum()
        if n == 0:
            out.append(float("nan"))
            continue
        out.append(float(stats.chisquare(obs, np.asarray(probs[v]) * n).pvalue))
    return out
