"""Discounted and ergodic HJB solvers on networks, plus a comparison harness."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CrossCheckError, NonConvergence, SingularJacobian
from .graph import GridFunction, MetricGraph, integrate, mean
from .hamiltonian import Hamiltonian
from .operators import _values, interior_indicator, pde_jacobian, pde_residual

log = logging.getLogger(__name__)

DIRECT, VANISHING = "direct_ergodic", "vanishing_discount"
MIN_STEP = 2.0**-20


@dataclass
class HjbConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    damping: float = 1.0
    lambda_schedule: tuple[float, ...] = (1.0, 0.5, 0.1, 0.01, 0.001)
    method: str = DIRECT
    vertex_order: int = 1
    cross_check: bool = False
    cross_check_tol: float = 1e-2

    def __post_init__(self):
        if self.newton_tol <= 0 or self.max_newton_iters < 1:
            raise ValueError("newton_tol must be positive and max_newton_iters >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        sched = tuple(float(x) for x in self.lambda_schedule)
        if not sched or any(x <= 0 for x in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("lambda_schedule must be positive and strictly decreasing")
        self.lambda_schedule = sched
        if self.method not in (DIRECT, VANISHING):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class ErgodicSolution:
    u: GridFunction
    rho: float
    residual_norm: float
    newton_iters: int
    lambda_trace: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class ComparisonReport:
    status: str  # "holds", "violated" or "inapplicable"
    interior_gap: float  # min over interior rows of residual(u1) - residual(u2)
    vertex_gap: float  # same for the (sign-flipped) Kirchhoff rows
    min_difference: float  # min(u1 - u2)

    @property
    def hypotheses_hold(self) -> bool:
        return self.status != "inapplicable"

    @property
    def conclusion_holds(self) -> bool:
        return self.status == "holds"


def _noise_floor(J: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    # residual level below which round-off dominates
    jn = abs(J).sum(axis=1).max()
    return 64 * np.finfo(float).eps * (jn * (np.max(np.abs(x)) + 1.0) + np.max(np.abs(b)) + 1.0)


def _newton(residual, jacobian, x0: np.ndarray, cfg: HjbConfig, label: str) -> tuple[np.ndarray, float, int]:
    """Damped Newton with backtracking on the residual 2-norm."""
    x = x0.copy()
    r = residual(x)
    rn = float(np.max(np.abs(r)))
    for it in range(1, cfg.max_newton_iters + 1):
        J = jacobian(x)
        if rn < max(cfg.newton_tol, _noise_floor(J, x, r)):
            return x, rn, it - 1
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                dx = spla.spsolve(J.tocsc(), -r)
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise SingularJacobian(f"{label}: singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"{label}: non-finite Newton step at iteration {it}")
        step = cfg.damping
        r2 = np.linalg.norm(r)
        while True:
            xt = x + step * dx
            rt = residual(xt)
            if np.linalg.norm(rt) < (1 - 1e-4 * step) * r2 or step <= MIN_STEP:
                break
            step *= 0.5
        x, r = xt, rt
        rn = float(np.max(np.abs(r)))
        log.debug("%s newton %d: |res|=%.3e step=%.3g", label, it, rn, step)
    J = jacobian(x)
    if rn < max(cfg.newton_tol, _noise_floor(J, x, r)):
        return x, rn, cfg.max_newton_iters
    raise NonConvergence(f"{label}: Newton did not converge in {cfg.max_newton_iters} iterations", rn)


def _default_cfg(cfg: HjbConfig | None) -> HjbConfig:
    return cfg if cfg is not None else HjbConfig()


def solve_discounted(
    g: MetricGraph,
    H: Hamiltonian,
    f,
    lam: float,
    cfg: HjbConfig | None = None,
    u0: GridFunction | None = None,
) -> GridFunction:
    """Solve ``-nu u'' + H(x, u') + lam u = f`` with continuity and Kirchhoff rows."""
    if not lam > 0:
        raise ValueError("discount lambda must be positive")
    cfg = _default_cfg(cfg)
    fv = _values(g, f)
    vo = cfg.vertex_order
    ind = interior_indicator(g)

    def residual(x):
        return pde_residual(g, H, x, 0.0, fv, lam=lam, vertex_order=vo)

    def jacobian(x):
        return pde_jacobian(g, H, x, lam=0.0, vertex_order=vo) + sp.diags(lam * ind)

    x0 = np.zeros(g.n_dofs) if u0 is None else u0.values.copy()
    x, _, _ = _newton(residual, jacobian, x0, cfg, f"discounted(lambda={lam:g})")
    return GridFunction(g, x)


def _solve_direct(g, H, fv, cfg, u0: np.ndarray, rho0: float) -> tuple[np.ndarray, float, float, int]:
    n = g.n_dofs
    vo = cfg.vertex_order
    w = g.weights
    e = sp.csr_matrix(interior_indicator(g)[:, None])
    wrow = sp.csr_matrix(w[None, :])

    def residual(z):
        return np.append(pde_residual(g, H, z[:n], z[n], fv, vertex_order=vo), w @ z[:n])

    def jacobian(z):
        return sp.bmat([[pde_jacobian(g, H, z[:n], vertex_order=vo), e], [wrow, None]], format="csr")

    z, rn, its = _newton(residual, jacobian, np.append(u0, rho0), cfg, "ergodic")
    return z[:n], float(z[n]), rn, its


def _initial_rho(g: MetricGraph, H: Hamiltonian, fv: np.ndarray) -> float:
    tab = g.interior
    h0 = np.zeros(g.n_dofs)
    h0[: g.n_edge_dofs] = H.value(tab["edge"], tab["x"], np.zeros(g.n_edge_dofs))
    # vertex rows carry no source; use the interior average
    ind = interior_indicator(g)
    w = g.weights * ind
    return float(w @ (fv - h0) / w.sum())


def solve_ergodic(g: MetricGraph, H: Hamiltonian, f, cfg: HjbConfig | None = None,
                  u0: GridFunction | None = None) -> ErgodicSolution:
    """Find ``(u, rho)`` with ``-nu u'' + H(x, u') + rho = f``, Kirchhoff rows and ``int u = 0``."""
    cfg = _default_cfg(cfg)
    fv = _values(g, f)
    rho0 = _initial_rho(g, H, fv)
    start = np.zeros(g.n_dofs) if u0 is None else u0.values.copy()

    if cfg.method == DIRECT:
        try:
            u, rho, rn, its = _solve_direct(g, H, fv, cfg, start, rho0)
            sol = ErgodicSolution(GridFunction(g, u), rho, rn, its)
        except (NonConvergence, SingularJacobian) as exc:
            # poor starting guess (typically at small viscosity): continue
            # from the strongly monotone discounted problems instead
            log.warning("direct ergodic Newton failed (%s); retrying by discount continuation", exc)
            sol = _vanishing(g, H, fv, cfg)
        if cfg.cross_check:
            other = _vanishing(g, H, fv, cfg)
            _cross_check(sol, other, cfg)
        return sol
    sol = _vanishing(g, H, fv, cfg)
    if cfg.cross_check:
        u, rho, rn, its = _solve_direct(g, H, fv, cfg, np.zeros(g.n_dofs), rho0)
        _cross_check(sol, ErgodicSolution(GridFunction(g, u), rho, rn, its), cfg)
    return sol


def _vanishing(g, H, fv, cfg: HjbConfig) -> ErgodicSolution:
    trace = []
    u = None
    prev_lam = None
    for lam in cfg.lambda_schedule:
        if u is not None:
            # rescale the constant part, which grows like rho / lambda
            c = mean(g, u)
            u = (u - c) + c * prev_lam / lam
        u = solve_discounted(g, H, fv, lam, cfg, u0=u)
        trace.append((lam, lam * mean(g, u)))
        prev_lam = lam
    lam, rho = trace[-1]
    w0 = (u - mean(g, u)).values
    u_fin, rho_fin, rn, its = _solve_direct(g, H, fv, cfg, w0, rho)
    return ErgodicSolution(GridFunction(g, u_fin), rho_fin, rn, its, trace)


def _cross_check(a: ErgodicSolution, b: ErgodicSolution, cfg: HjbConfig) -> None:
    gap = max(abs(a.rho - b.rho), (a.u - b.u).sup())
    if gap > cfg.cross_check_tol:
        raise CrossCheckError(f"direct and vanishing-discount solutions differ by {gap:.3e}")


def discounted_operator(g: MetricGraph, H: Hamiltonian, lam: float, u, vertex_order: int = 1) -> np.ndarray:
    """``-nu u'' + H_num + lam u`` on interior rows, scaled ``-sum nu d u`` on vertex rows."""
    return pde_residual(g, H, u, 0.0, np.zeros(g.n_dofs), lam=lam, vertex_order=vertex_order)


def verify_comparison(
    g: MetricGraph,
    H: Hamiltonian,
    lam: float,
    u1: GridFunction,
    u2: GridFunction,
    tol: float = 1e-9,
    vertex_order: int = 1,
) -> ComparisonReport:
    """Check the discrete comparison principle for one pair.

    Hypotheses: the discounted operator of ``u1`` dominates that of ``u2``
    on interior rows, and ``sum nu d u1 <= sum nu d u2`` at every vertex
    (the vertex rows carry a minus sign, so both read ``row(u1) >= row(u2)``).
    Conclusion: ``u1 >= u2`` at every DOF.  Both checks allow ``-tol`` slack.
    """
    if not lam > 0:
        raise ValueError("discount lambda must be positive")
    d = discounted_operator(g, H, lam, u1, vertex_order) - discounted_operator(g, H, lam, u2, vertex_order)
    ne = g.n_edge_dofs
    igap = float(d[:ne].min()) if ne else np.inf
    vgap = float(d[ne:].min())
    diff = float(np.min(u1.values - u2.values))
    if igap < -tol or vgap < -tol:
        status = "inapplicable"
    else:
        status = "holds" if diff >= -tol else "violated"
    return ComparisonReport(status, igap, vgap, diff)


def rho_bound(g: MetricGraph, H: Hamiltonian, f) -> float:
    """``max |H(., 0) - f|`` over the grid nodes (interior and vertex)."""
    fv = _values(g, f)
    tab = g.interior
    vals = [np.abs(H.value(tab["edge"], tab["x"], np.zeros(g.n_edge_dofs)) - fv[: g.n_edge_dofs])]
    for v in range(g.n_vertices):
        for j, end in g.incidence[v]:
            x = 0.0 if end == 0 else g.edges[j].length
            h0 = H.value(np.array([j]), np.array([x]), np.zeros(1))
            vals.append(np.abs(h0 - fv[g.vertex_dof(v)]))
    return float(np.max(np.concatenate(vals)))


def normalization_residual(g: MetricGraph, u: GridFunction) -> float:
    return abs(integrate(g, u))
