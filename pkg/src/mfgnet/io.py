"""Result files: per-edge CSV tables and JSON summaries.

CSV numbers use ``%.17g`` so every double round-trips; JSON floats use
Python's shortest round-trip repr.  Nothing time-dependent is written, so
identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .graph import GridFunction, MetricGraph
from .hamiltonian import Hamiltonian
from .operators import drift_profiles
from .stochastic import OccupationHistogram, cell_averages

FMT = "%.17g"


def _clean(obj):
    """Convert numpy scalars/arrays and non-finite floats to plain JSON data."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
    return path


def _write_table(path: Path, header: list[str], columns: list[np.ndarray]) -> Path:
    arr = np.column_stack(columns)
    np.savetxt(path, arr, fmt=FMT, delimiter=",", header=",".join(header), comments="")
    return path


def graph_dict(g: MetricGraph) -> dict:
    return {
        "vertices": [str(v) for v in g.vertex_ids],
        "edges": [
            {
                "id": str(e.id),
                "start": str(g.vertex_ids[e.start]),
                "end": str(g.vertex_ids[e.end]),
                "length": e.length,
                "diffusion": e.diffusion,
                "cells": e.cells,
            }
            for e in g.edges
        ],
    }


def write_edge_tables(
    g: MetricGraph, out: Path, prefix: str, columns: dict[str, GridFunction | list[np.ndarray]]
) -> list[Path]:
    """One CSV per edge: arclength ``x`` then the given columns at every node."""
    paths = []
    for j, e in enumerate(g.edges):
        cols = [e.nodes]
        for val in columns.values():
            cols.append(val.edge_profile(j) if isinstance(val, GridFunction) else np.asarray(val[j]))
        paths.append(_write_table(out / f"{prefix}edge_{e.id}.csv", ["x", *columns], cols))
    return paths


def solution_summary(sol) -> dict:
    return {
        "rho": sol.rho,
        "fixed_point_iters": sol.fixed_point_iters,
        "final_update_norm": sol.final_update_norm,
        "history": [{"update": a, "rho": b} for a, b in sol.history],
        "audit": dict(sol.audit),
    }


def emit_solution(sol, g: MetricGraph, out_dir, H: Hamiltonian | None = None, extra: dict | None = None) -> list[Path]:
    """Write ``edge_<id>.csv`` (x, u, m, drift), ``summary.json`` and ``graph.json``.

    ``drift`` is ``dH/dp(x, u')``; it is omitted (NaN column) when ``H`` is
    not given.  ``extra`` entries are merged into the summary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if H is not None:
        drift = drift_profiles(g, H, sol.u)
    else:
        drift = [np.full(e.cells + 1, np.nan) for e in g.edges]
    paths = write_edge_tables(g, out, "", {"u": sol.u, "m": sol.m, "drift": drift})
    summary = {"mfg": solution_summary(sol)}
    if extra:
        summary.update(extra)
    paths.append(write_json(out / "summary.json", summary))
    paths.append(write_json(out / "graph.json", graph_dict(g)))
    return paths


def write_histogram(g: MetricGraph, hist: OccupationHistogram, m: GridFunction, path: Path) -> Path:
    """Per-cell table: edge index, cell bounds, empirical density, cell average of ``m``."""
    dens = hist.density()
    avgs = cell_averages(m)
    rows = []
    for j, e in enumerate(g.edges):
        k = np.arange(e.cells)
        rows.append(np.column_stack([np.full(e.cells, j), k * e.h, (k + 1) * e.h, dens[j], avgs[j]]))
    arr = np.vstack(rows)
    header = "edge,x_left,x_right,density,m_average"
    np.savetxt(path, arr, fmt=FMT, delimiter=",", header=header, comments="")
    return path


def read_edge_table(path) -> dict[str, np.ndarray]:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    header = Path(path).read_text().splitlines()[0].split(",")
    return {name: arr[:, i] for i, name in enumerate(header)}
