"""YAML problem configuration: parsing, validation, defaults and echo.

Grammar (all keys except ``graph`` optional)::

    graph:
      vertices: [A, B, C]
      edges:
        - {id: e0, start: A, end: B, length: 1.0, diffusion: 1.0, cells: 50}
    hamiltonian:
      family: quadratic          # or "clipped" (adds key ``bound``)
      scheme: upwind             # or centered
      kappa: 0.5                 # number, or {edge_id: number}
      c:  {edge_id: PROFILE}     # drift coefficient, default 0
      f0: {edge_id: PROFILE}     # potential, default 0
    hjb_rhs: {edge_id: PROFILE}  # right-hand side of the standalone hjb task
    coupling: {name: power, exponent: 1.0, scale: 1.0, monotone: true}
                                 # or {name: linear, slope: 1.0, offset: 0.0}
    solver:
      damping: 0.5
      fp_tol: 1.0e-8
      max_outer_iters: 500
      audit_tol: 1.0e-6
      initial_density: uniform   # or {edge_id: PROFILE} (normalized)
      hjb: {newton_tol: 1.0e-10, max_newton_iters: 50, damping: 1.0,
            method: direct_ergodic, lambda_schedule: [1, 0.5, 0.1, 0.01, 0.001],
            vertex_order: 1}
    oracle: {n_agents: 10000, n_steps: 10000, dt: 0.001, burn_in: 0.2, seed: 0}
    refine: {levels: 3}
    tasks: [mfg]                 # subset of hjb, fp, mfg, oracle, refine
    outputs: out

A PROFILE is a number (constant), a list of ``cells + 1`` nodal samples,
or ``{builtin: constant|sine|bump, ...parameters}``.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .graph import EdgeSpec, GraphSpec, MetricGraph, build_graph
from .hamiltonian import Hamiltonian, QuadraticHamiltonian, builtin, clipped, piecewise, sampled
from .hjb import DIRECT, VANISHING, HjbConfig
from .mfg import CouplingSpec, MFGConfig, power_coupling

TASKS = ("hjb", "fp", "mfg", "oracle", "refine")
BUILTINS = ("constant", "sine", "bump")


@dataclass
class HamiltonianConfig:
    family: str = "quadratic"
    scheme: str = "upwind"
    kappa: Any = 0.5
    c: dict = field(default_factory=dict)
    f0: dict = field(default_factory=dict)
    bound: float | None = None


@dataclass
class CouplingConfig:
    name: str = "power"
    parameters: dict = field(default_factory=lambda: {"exponent": 1.0, "scale": 1.0})
    monotone: bool = True


@dataclass
class OracleConfig:
    n_agents: int = 10_000
    n_steps: int = 10_000
    dt: float = 1e-3
    burn_in: float = 0.2
    seed: int = 0


@dataclass
class ProblemSpec:
    graph: GraphSpec
    hamiltonian: HamiltonianConfig = field(default_factory=HamiltonianConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    solver: MFGConfig = field(default_factory=MFGConfig)
    hjb_rhs: dict = field(default_factory=dict)
    initial_density: Any = "uniform"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    refine_levels: int = 3
    outputs: str = "out"
    tasks: list[str] = field(default_factory=lambda: ["mfg"])
    warnings: list[str] = field(default_factory=list)


# -- small validators ------------------------------------------------------------


def _num(value, path: str, positive: bool = False, integer: bool = False):
    if isinstance(value, bool):
        raise ConfigError("expected a number, got a boolean", path)
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", path) from None
    if not np.isfinite(out):
        raise ConfigError("must be finite", path)
    if positive and out <= 0:
        raise ConfigError("must be positive", path)
    if integer:
        if out != int(out):
            raise ConfigError("must be an integer", path)
        return int(out)
    return out


def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", path)
    return value


def _reject_unknown(d: dict, allowed: set, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError("unknown key", f"{path}.{k}" if path else str(k))


def _profile(value, path: str, cells: int):
    if isinstance(value, dict):
        name = value.get("builtin")
        if name not in BUILTINS:
            raise ConfigError(f"builtin must be one of {BUILTINS}", f"{path}.builtin")
        params = {k: _num(v, f"{path}.{k}") for k, v in value.items() if k != "builtin"}
        return {"builtin": name, **params}
    if isinstance(value, list):
        if len(value) != cells + 1:
            raise ConfigError(f"expected {cells + 1} samples (cells + 1), got {len(value)}", path)
        return [_num(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return _num(value, path)


def _edge_table(raw, path: str, edges: dict[Any, EdgeSpec]) -> dict:
    out = {}
    for eid, val in _mapping(raw, path).items():
        if eid not in edges:
            raise ConfigError(f"unknown edge id {eid!r}", f"{path}.{eid}")
        out[eid] = _profile(val, f"{path}.{eid}", edges[eid].cells)
    return out


# -- parsing ----------------------------------------------------------------------


def _parse_graph(raw) -> GraphSpec:
    raw = _mapping(raw, "graph")
    _reject_unknown(raw, {"vertices", "edges"}, "graph")
    verts = raw.get("vertices")
    if not isinstance(verts, list) or not verts:
        raise ConfigError("expected a non-empty list", "graph.vertices")
    edges_raw = raw.get("edges")
    if not isinstance(edges_raw, list) or not edges_raw:
        raise ConfigError("expected a non-empty list", "graph.edges")
    edges = []
    for k, e in enumerate(edges_raw):
        p = f"graph.edges[{k}]"
        e = _mapping(e, p)
        _reject_unknown(e, {"id", "start", "end", "length", "diffusion", "cells"}, p)
        for key in ("id", "start", "end", "length"):
            if key not in e:
                raise ConfigError("missing key", f"{p}.{key}")
        edges.append(
            EdgeSpec(
                id=e["id"],
                start=e["start"],
                end=e["end"],
                length=_num(e["length"], f"{p}.length"),
                diffusion=_num(e.get("diffusion", 1.0), f"{p}.diffusion"),
                cells=_num(e.get("cells", 50), f"{p}.cells", integer=True),
            )
        )
    return GraphSpec(list(verts), edges)


def _parse_hamiltonian(raw, edges) -> HamiltonianConfig:
    raw = _mapping(raw, "hamiltonian")
    _reject_unknown(raw, {"family", "scheme", "kappa", "c", "f0", "bound"}, "hamiltonian")
    fam = raw.get("family", "quadratic")
    if fam not in ("quadratic", "clipped"):
        raise ConfigError("family must be 'quadratic' or 'clipped'", "hamiltonian.family")
    scheme = raw.get("scheme", "upwind")
    if scheme not in ("upwind", "centered"):
        raise ConfigError("scheme must be 'upwind' or 'centered'", "hamiltonian.scheme")
    kappa = raw.get("kappa", 0.5)
    if isinstance(kappa, dict):
        for eid in kappa:
            if eid not in edges:
                raise ConfigError(f"unknown edge id {eid!r}", f"hamiltonian.kappa.{eid}")
        missing = [eid for eid in edges if eid not in kappa]
        if missing:
            raise ConfigError(f"missing edges {missing}", "hamiltonian.kappa")
        kappa = {eid: _num(v, f"hamiltonian.kappa.{eid}", positive=True) for eid, v in kappa.items()}
    else:
        kappa = _num(kappa, "hamiltonian.kappa", positive=True)
    bound = None
    if fam == "clipped":
        bound = _num(raw.get("bound", 2.0), "hamiltonian.bound", positive=True)
    return HamiltonianConfig(
        family=fam,
        scheme=scheme,
        kappa=kappa,
        c=_edge_table(raw.get("c"), "hamiltonian.c", edges),
        f0=_edge_table(raw.get("f0"), "hamiltonian.f0", edges),
        bound=bound,
    )


def _parse_coupling(raw) -> CouplingConfig:
    raw = copy.deepcopy(_mapping(raw, "coupling"))
    name = raw.pop("name", "power")
    monotone = raw.pop("monotone", True)
    if not isinstance(monotone, bool):
        raise ConfigError("expected a boolean", "coupling.monotone")
    if name == "power":
        _reject_unknown(raw, {"exponent", "scale"}, "coupling")
        params = {"exponent": _num(raw.get("exponent", 1.0), "coupling.exponent"),
                  "scale": _num(raw.get("scale", 1.0), "coupling.scale")}
    elif name == "linear":
        _reject_unknown(raw, {"slope", "offset"}, "coupling")
        params = {"slope": _num(raw.get("slope", 1.0), "coupling.slope"),
                  "offset": _num(raw.get("offset", 0.0), "coupling.offset")}
    else:
        raise ConfigError("name must be 'power' or 'linear'", "coupling.name")
    return CouplingConfig(name, params, monotone)


def _parse_solver(raw) -> tuple[MFGConfig, Any]:
    raw = _mapping(raw, "solver")
    _reject_unknown(raw, {"damping", "fp_tol", "max_outer_iters", "audit_tol", "initial_density", "hjb"}, "solver")
    h = _mapping(raw.get("hjb"), "solver.hjb")
    _reject_unknown(
        h, {"newton_tol", "max_newton_iters", "damping", "method", "lambda_schedule", "vertex_order"}, "solver.hjb"
    )
    method = h.get("method", DIRECT)
    if method not in (DIRECT, VANISHING):
        raise ConfigError(f"must be {DIRECT!r} or {VANISHING!r}", "solver.hjb.method")
    sched = h.get("lambda_schedule", [1.0, 0.5, 0.1, 0.01, 0.001])
    if not isinstance(sched, list):
        raise ConfigError("expected a list", "solver.hjb.lambda_schedule")
    try:
        hjb = HjbConfig(
            newton_tol=_num(h.get("newton_tol", 1e-10), "solver.hjb.newton_tol", positive=True),
            max_newton_iters=_num(h.get("max_newton_iters", 50), "solver.hjb.max_newton_iters", integer=True),
            damping=_num(h.get("damping", 1.0), "solver.hjb.damping"),
            lambda_schedule=tuple(_num(x, f"solver.hjb.lambda_schedule[{i}]") for i, x in enumerate(sched)),
            method=method,
            vertex_order=_num(h.get("vertex_order", 1), "solver.hjb.vertex_order", integer=True),
        )
        cfg = MFGConfig(
            damping=_num(raw.get("damping", 0.5), "solver.damping"),
            fp_tol=_num(raw.get("fp_tol", 1e-8), "solver.fp_tol", positive=True),
            max_outer_iters=_num(raw.get("max_outer_iters", 500), "solver.max_outer_iters", integer=True),
            audit_tol=_num(raw.get("audit_tol", 1e-6), "solver.audit_tol", positive=True),
            hjb=hjb,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "solver") from None
    if hjb.vertex_order not in (1, 2):
        raise ConfigError("must be 1 or 2", "solver.hjb.vertex_order")
    return cfg, raw.get("initial_density", "uniform")


def parse_config(path: str | Path) -> ProblemSpec:
    """Read and validate a YAML problem file; all defaults are filled in."""
    text = Path(path).read_text()
    return parse_config_text(text)


def parse_config_text(text: str) -> ProblemSpec:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    raw = _mapping(raw, "<root>")
    _reject_unknown(
        raw, {"graph", "hamiltonian", "hjb_rhs", "coupling", "solver", "oracle", "refine", "tasks", "outputs"}, ""
    )
    if "graph" not in raw:
        raise ConfigError("missing key", "graph")
    gspec = _parse_graph(raw["graph"])
    edges = {e.id: e for e in gspec.edges}
    ham = _parse_hamiltonian(raw.get("hamiltonian"), edges)
    coup = _parse_coupling(raw.get("coupling"))
    solver, init = _parse_solver(raw.get("solver"))
    if init != "uniform":
        init = _edge_table(init, "solver.initial_density", edges)

    o = _mapping(raw.get("oracle"), "oracle")
    _reject_unknown(o, {"n_agents", "n_steps", "dt", "burn_in", "seed"}, "oracle")
    oracle = OracleConfig(
        n_agents=_num(o.get("n_agents", 10_000), "oracle.n_agents", positive=True, integer=True),
        n_steps=_num(o.get("n_steps", 10_000), "oracle.n_steps", positive=True, integer=True),
        dt=_num(o.get("dt", 1e-3), "oracle.dt", positive=True),
        burn_in=_num(o.get("burn_in", 0.2), "oracle.burn_in"),
        seed=_num(o.get("seed", 0), "oracle.seed", integer=True),
    )
    if not 0 <= oracle.burn_in < 1:
        raise ConfigError("must lie in [0, 1)", "oracle.burn_in")
    if not 0 <= oracle.seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", "oracle.seed")

    r = _mapping(raw.get("refine"), "refine")
    _reject_unknown(r, {"levels"}, "refine")
    levels = _num(r.get("levels", 3), "refine.levels", integer=True)
    if levels < 3:
        raise ConfigError("at least 3 levels are needed to estimate an order", "refine.levels")

    tasks = raw.get("tasks", ["mfg"])
    if isinstance(tasks, str):
        tasks = [t.strip() for t in tasks.split(",") if t.strip()]
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("expected a non-empty list", "tasks")
    for i, t in enumerate(tasks):
        if t not in TASKS:
            raise ConfigError(f"unknown task {t!r}; choose from {TASKS}", f"tasks[{i}]")

    spec = ProblemSpec(
        graph=gspec,
        hamiltonian=ham,
        coupling=coup,
        solver=solver,
        hjb_rhs=_edge_table(raw.get("hjb_rhs"), "hjb_rhs", edges),
        initial_density=init,
        oracle=oracle,
        refine_levels=levels,
        outputs=str(raw.get("outputs", "out")),
        tasks=list(dict.fromkeys(tasks)),
    )
    _check_coupling(spec)
    return spec


def _check_coupling(spec: ProblemSpec) -> None:
    if not spec.coupling.monotone:
        return
    V = make_coupling(spec.coupling)
    total = sum(e.length for e in spec.graph.edges)
    if not V.check_monotone(m_max=10.0 / total + 10.0):
        spec.coupling.monotone = False
        spec.warnings.append(
            "coupling declared monotone but V' < 0 on sampled densities; monotone flag cleared"
        )


# -- building solver objects -----------------------------------------------------------


def make_graph(spec: ProblemSpec, refine: int = 1) -> MetricGraph:
    g = build_graph(spec.graph)
    return g.refined(refine) if refine != 1 else g


def _coefficient(table: dict, g: MetricGraph):
    if not table:
        return None
    lengths = [e.length for e in g.edges]
    coeffs = [None] * g.n_edges
    for eid, prof in table.items():
        j = g.edge_index(eid)
        if isinstance(prof, dict):
            params = {k: v for k, v in prof.items() if k != "builtin"}
            coeffs[j] = builtin(prof["builtin"], lengths, **params)
        elif isinstance(prof, list):
            # samples were given on the unrefined grid; interpolate in arclength
            nodes = np.linspace(0.0, lengths[j], len(prof))
            arr = np.asarray(prof)
            coeffs[j] = lambda edge, x, nodes=nodes, arr=arr: np.interp(x, nodes, arr)
        else:
            v = float(prof)
            coeffs[j] = lambda edge, x, v=v: np.full(np.shape(x), v)
    return piecewise(coeffs)


def make_hamiltonian(spec: ProblemSpec, g: MetricGraph) -> Hamiltonian:
    hc = spec.hamiltonian
    if isinstance(hc.kappa, dict):
        kappa = [hc.kappa[e.id] for e in g.edges]
    else:
        kappa = hc.kappa
    H = QuadraticHamiltonian(kappa, c=_coefficient(hc.c, g), f0=_coefficient(hc.f0, g), scheme=hc.scheme)
    if hc.family == "clipped":
        return clipped(H, hc.bound)
    return H


def make_coupling(cc: CouplingConfig) -> CouplingSpec:
    if cc.name == "power":
        V = power_coupling(cc.parameters["exponent"], cc.parameters["scale"])
    else:
        a, b = cc.parameters["slope"], cc.parameters["offset"]
        V = CouplingSpec(lambda m: a * m + b, lambda m: np.full(np.shape(m), a), monotone=a >= 0, name="linear")
    V.monotone = cc.monotone
    return V


def sample_table(table: dict, g: MetricGraph, default: float = 0.0) -> np.ndarray:
    """Evaluate an edge profile table at every DOF (vertices from the first edge)."""
    from .graph import GridFunction

    coef = _coefficient(table, g)
    if coef is None:
        return np.full(g.n_dofs, default)
    return GridFunction.from_function(g, lambda j, x: coef(np.full(np.shape(x), j), x)).values


# -- echo -------------------------------------------------------------------------------


def to_dict(spec: ProblemSpec) -> dict:
    """Plain-data form of ``spec`` that :func:`parse_config_text` maps back to it."""
    s = spec.solver
    hc = spec.hamiltonian
    ham = {"family": hc.family, "scheme": hc.scheme, "kappa": hc.kappa, "c": hc.c, "f0": hc.f0}
    if hc.bound is not None:
        ham["bound"] = hc.bound
    return {
        "graph": {
            "vertices": list(spec.graph.vertices),
            "edges": [dataclasses.asdict(e) for e in spec.graph.edges],
        },
        "hamiltonian": ham,
        "hjb_rhs": spec.hjb_rhs,
        "coupling": {"name": spec.coupling.name, **spec.coupling.parameters, "monotone": spec.coupling.monotone},
        "solver": {
            "damping": s.damping,
            "fp_tol": s.fp_tol,
            "max_outer_iters": s.max_outer_iters,
            "audit_tol": s.audit_tol,
            "initial_density": spec.initial_density,
            "hjb": {
                "newton_tol": s.hjb.newton_tol,
                "max_newton_iters": s.hjb.max_newton_iters,
                "damping": s.hjb.damping,
                "method": s.hjb.method,
                "lambda_schedule": list(s.hjb.lambda_schedule),
                "vertex_order": s.hjb.vertex_order,
            },
        },
        "oracle": dataclasses.asdict(spec.oracle),
        "refine": {"levels": spec.refine_levels},
        "tasks": list(spec.tasks),
        "outputs": spec.outputs,
    }


def echo(spec: ProblemSpec) -> str:
    return yaml.safe_dump(to_dict(spec), sort_keys=False)
