"""Task orchestration and the ``mfg-net`` command line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .config import TASKS, ProblemSpec
from .errors import ConfigError, MfgNetError
from .fp import solve_stationary_fp
from .graph import GridFunction
from .hjb import solve_ergodic
from .io import _clean, emit_solution, write_edge_tables, write_histogram, write_json
from .mfg import audit_passes, solve_mfg
from .operators import assemble_fp_operator, drift_profiles
from .stochastic import compare_histogram, routing_pvalues, simulate

log = logging.getLogger(__name__)

DEPENDS = {"hjb": (), "fp": ("hjb",), "mfg": (), "oracle": ("mfg",), "refine": ("mfg",)}


@dataclass
class TaskResult:
    status: str = "skipped"  # ok, failed, audit_failed
    seconds: float = 0.0
    data: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class RunReport:
    tasks: dict[str, TaskResult] = field(default_factory=dict)
    rho: float | None = None
    iterations: int | None = None
    audit: dict[str, float] = field(default_factory=dict)
    manifest: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        ok = all(t.status == "ok" for t in self.tasks.values())
        return 0 if ok and self.tasks else 1

    def numeric(self) -> dict:
        """Everything except timings, for determinism checks and ``report.json``."""
        return _clean({
            "tasks": {k: {"status": t.status, "data": t.data, "error": t.error} for k, t in self.tasks.items()},
            "rho": self.rho,
            "iterations": self.iterations,
            "audit": self.audit,
            "warnings": self.warnings,
            "exit_code": self.exit_code,
        })


def task_order(requested) -> list[str]:
    """Dependency closure of ``requested`` in canonical order."""
    need = set()

    def add(t):
        if t not in need:
            need.add(t)
            for d in DEPENDS[t]:
                add(d)

    for t in requested:
        if t not in DEPENDS:
            raise ValueError(f"unknown task {t!r}")
        add(t)
    return [t for t in TASKS if t in need]


def _uniform_or_table(spec: ProblemSpec, g):
    if spec.initial_density == "uniform":
        return "uniform"
    vals = cfgmod.sample_table(spec.initial_density, g)
    return GridFunction(g, vals)


def _solve_level(spec: ProblemSpec, factor: int):
    g = cfgmod.make_graph(spec, factor)
    H = cfgmod.make_hamiltonian(spec, g)
    V = cfgmod.make_coupling(spec.coupling)
    mcfg = dataclasses.replace(spec.solver, initial_density=_uniform_or_table(spec, g))
    return g, H, solve_mfg(g, H, V, mcfg)


def richardson(rhos) -> dict:
    """Observed order and extrapolated limit from three values on h, h/2, h/4."""
    r1, r2, r3 = rhos[-3:]
    d1, d2 = r1 - r2, r2 - r3
    if d2 == 0 or d1 == 0 or d1 / d2 <= 0:
        order = float("nan")
        extrap = r3
    else:
        order = math.log2(abs(d1 / d2))
        extrap = r3 + (r3 - r2) / (2.0**order - 1.0) if order > 0 else r3
    return {"order": order, "extrapolated_rho": extrap}


def run(spec: ProblemSpec, out_dir: str | Path | None = None) -> RunReport:
    """Execute the requested tasks (plus their dependencies) and write outputs."""
    out = Path(out_dir if out_dir is not None else spec.outputs)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(warnings=list(spec.warnings))
    files: list[Path] = [out / "config.yaml"]
    (out / "config.yaml").write_text(cfgmod.echo(spec))
    state: dict = {}
    extra: dict = {}

    for name in task_order(spec.tasks):
        res = TaskResult()
        report.tasks[name] = res
        missing = [d for d in DEPENDS[name] if report.tasks.get(d) is None or d not in state]
        if missing:
            res.status, res.error = "failed", f"dependency {missing[0]!r} did not complete"
            continue
        t0 = time.perf_counter()
        try:
            _TASKS[name](spec, state, res, out, files)
            if res.status == "skipped":
                res.status = "ok"
        except (MfgNetError, ValueError, np.linalg.LinAlgError) as exc:
            stage = getattr(exc, "stage", None)
            res.status = "failed"
            res.error = f"{type(exc).__name__}{f' [{stage}]' if stage else ''}: {exc}"
            if getattr(exc, "history", None):
                res.data["history"] = [{"update": a, "rho": b} for a, b in exc.history]
            log.error("task %s failed: %s", name, res.error)
        res.seconds = time.perf_counter() - t0
        if name != "mfg":
            extra[name] = {"status": res.status, **res.data}

    if "mfg" in state:
        g, H, sol = state["mfg"]
        report.rho, report.iterations, report.audit = sol.rho, sol.fixed_point_iters, dict(sol.audit)
        extra["mfg_status"] = report.tasks["mfg"].status
        files.extend(emit_solution(sol, g, out, H, extra=extra))
    else:
        files.append(write_json(out / "summary.json", extra))
    files.append(write_json(out / "report.json", report.numeric()))
    report.manifest = [str(p) for p in files]
    return report


def _task_hjb(spec, state, res, out, files):
    g = cfgmod.make_graph(spec)
    H = cfgmod.make_hamiltonian(spec, g)
    f = cfgmod.sample_table(spec.hjb_rhs, g)
    sol = solve_ergodic(g, H, f, spec.solver.hjb)
    state["hjb"] = (g, H, sol)
    res.data.update(rho=sol.rho, newton_iters=sol.newton_iters, residual=sol.residual_norm)
    files.extend(write_edge_tables(g, out, "hjb_", {"u": sol.u}))


def _task_fp(spec, state, res, out, files):
    g, H, hsol = state["hjb"]
    A = assemble_fp_operator(g, H, hsol.u, vertex_order=spec.solver.hjb.vertex_order)
    dens = solve_stationary_fp(g, A)
    state["fp"] = dens
    res.data.update(min_m=dens.min_value, residual=dens.linear_residual_norm)
    files.extend(write_edge_tables(g, out, "fp_", {"m": dens.m, "drift": drift_profiles(g, H, hsol.u)}))


def _task_mfg(spec, state, res, out, files):
    g, H, sol = _solve_level(spec, 1)
    state["mfg"] = (g, H, sol)
    res.data.update(rho=sol.rho, fixed_point_iters=sol.fixed_point_iters, audit=dict(sol.audit))
    if not audit_passes(sol.audit, spec.solver.audit_tol):
        res.status = "audit_failed"
        res.error = "residual audit exceeds tolerance"


def _task_oracle(spec, state, res, out, files):
    g, H, sol = state["mfg"]
    o = spec.oracle
    hist = simulate(g, drift_profiles(g, H, sol.u), n_agents=o.n_agents, n_steps=o.n_steps, dt=o.dt,
                    seed=o.seed, burn_in=o.burn_in)
    res.data.update(
        l1_distance=compare_histogram(hist, sol.m),
        routing_pvalues=routing_pvalues(hist, g.routing),
        exit_frequencies=[(e / max(e.sum(), 1)).tolist() for e in hist.exits],
        samples=hist.total_samples,
        seed=o.seed,
    )
    files.append(write_histogram(g, hist, sol.m, out / "histogram.csv"))


def _task_refine(spec, state, res, out, files):
    rhos = [state["mfg"][2].rho]
    for k in range(1, spec.refine_levels):
        rhos.append(_solve_level(spec, 2**k)[2].rho)
    h = [min(e.length / e.cells for e in spec.graph.edges) / 2**k for k in range(len(rhos))]
    res.data.update(h=h, rho=rhos, **richardson(rhos))


_TASKS = {"hjb": _task_hjb, "fp": _task_fp, "mfg": _task_mfg, "oracle": _task_oracle, "refine": _task_refine}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfg-net", description="Stationary mean field games on metric networks.")
    p.add_argument("--config", required=True, help="YAML problem file")
    p.add_argument("--out-dir", help="output directory (default: 'outputs' from the config)")
    p.add_argument("--tasks", help="comma-separated subset of " + ",".join(TASKS))
    p.add_argument("--seed", type=int, help="oracle seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="fixed-point tolerance fp_tol")
    p.add_argument("--damping", type=float, help="fixed-point damping theta in (0, 1]")
    p.add_argument("-v", "--verbose", action="store_true", help="log iterations")
    return p


def apply_overrides(spec: ProblemSpec, args) -> ProblemSpec:
    text = cfgmod.to_dict(spec)
    if args.tasks:
        text["tasks"] = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if args.seed is not None:
        text["oracle"]["seed"] = args.seed
    if args.tol is not None:
        text["solver"]["fp_tol"] = args.tol
    if args.damping is not None:
        text["solver"]["damping"] = args.damping
    out = cfgmod.parse_config_text(yaml.safe_dump(text, sort_keys=False))
    out.warnings = spec.warnings + [w for w in out.warnings if w not in spec.warnings]
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = apply_overrides(cfgmod.parse_config(args.config), args)
    except (ConfigError, OSError) as exc:
        print(f"mfg-net: {exc}", file=sys.stderr)
        return 2
    report = run(spec, args.out_dir)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for name, t in report.tasks.items():
        line = f"{name:7s} {t.status:13s} {t.seconds:8.3f}s"
        if t.error:
            line += f"  {t.error}"
        print(line)
    if report.rho is not None:
        print(f"rho = {report.rho!r}  ({report.iterations} fixed-point iterations)")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
