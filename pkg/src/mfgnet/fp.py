"""Stationary Fokker-Planck densities and the dual parabolic evolution."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonPositiveDensity, NumericallySingular
from .graph import START, GridFunction, MetricGraph, integrate, oriented_stencil
from .hamiltonian import Hamiltonian
from .operators import SparseOperator, _values, dual_generator, edge_slopes


@dataclass
class DensityResult:
    m: GridFunction
    min_value: float
    linear_residual_norm: float
    replaced_row: int


@dataclass
class FpConfig:
    tol: float = 1e-9  # relative tolerance on the replaced-row check


@dataclass
class ParabolicConfig:
    dt: float = 0.05
    t_final: float = 1.0
    stepper: str = "implicit_euler"

    def __post_init__(self):
        if not (self.dt > 0 and self.t_final > 0):
            raise ValueError("dt and t_final must be positive")
        if self.dt > self.t_final:
            raise ValueError("dt must not exceed t_final")
        if self.stepper != "implicit_euler":
            raise ValueError(f"unsupported stepper {self.stepper!r}")


def _pick_row(A: sp.csr_matrix) -> int:
    """Row with the largest diagonal-to-off-diagonal ratio (first on ties)."""
    absA = abs(A)
    diag = np.abs(A.diagonal())
    off = np.asarray(absA.sum(axis=1)).ravel() - diag
    ratio = diag / np.where(off > 0, off, np.finfo(float).tiny)
    return int(np.argmax(ratio))


def solve_stationary_fp(g: MetricGraph, A_fp: SparseOperator, cfg: FpConfig | None = None) -> DensityResult:
    """Normalized kernel vector of the FP operator.

    One redundant row (all rows are, since ``1^T W A = 0``) is overwritten by
    the quadrature row ``sum_i w_i m_i = 1`` and the resulting nonsingular
    system is solved once.  The overwritten equation is then checked.
    """
    cfg = cfg or FpConfig()
    A = A_fp.matrix.tocsr()
    n = A.shape[0]
    if n != g.n_dofs:
        raise NumericallySingular("operator does not match graph")
    r = _pick_row(A)
    B = A.tolil()
    B[r, :] = g.weights
    b = np.zeros(n)
    b[r] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            m = spla.spsolve(B.tocsc(), b)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise NumericallySingular("kernel of the FP operator is not one-dimensional") from exc
    if not np.all(np.isfinite(m)):
        raise NumericallySingular("kernel of the FP operator is not one-dimensional")
    res = A @ m
    scale = float(abs(A).sum(axis=1).max()) * float(np.max(np.abs(m)))
    if abs(res[r]) > cfg.tol * scale:
        raise NumericallySingular(f"replaced row residual {abs(res[r]):.3e} exceeds tolerance")
    mmin = float(m.min())
    if mmin <= 0:
        raise NonPositiveDensity(f"density has minimum {mmin:.3e}; the discretization is not monotone")
    return DensityResult(GridFunction(g, m), mmin, float(np.max(np.abs(res))), r)


def _implicit_steps(M: sp.spmatrix, x0: np.ndarray, cfg: ParabolicConfig, times: list | None = None):
    nsteps = int(np.ceil(cfg.t_final / cfg.dt - 1e-12))
    dt = cfg.t_final / nsteps
    n = M.shape[0]
    lu = spla.splu(sp.csc_matrix(sp.identity(n) - dt * M))
    x = x0.copy()
    for k in range(nsteps):
        x = lu.solve(x)
        if not np.all(np.isfinite(x)):
            raise NumericallySingular(f"linear solve failed at step {k + 1}")
        if times is not None:
            times.append(((k + 1) * dt, x.copy()))
    return x


def evolve_dual(
    g: MetricGraph,
    H: Hamiltonian,
    u: GridFunction,
    phi: GridFunction,
    cfg: ParabolicConfig | None = None,
    history: list | None = None,
) -> GridFunction:
    """Implicit Euler for ``dU/dt = nu U'' - b U'`` with Kirchhoff rows, ``U(0) = phi``.

    ``b = dH/dp(x, u')`` is read from the same linearization as the FP
    operator.  When ``history`` is a list, ``(t, U)`` pairs are appended.
    """
    cfg = cfg or ParabolicConfig()
    G = dual_generator(g, H, u).matrix
    return GridFunction(g, _implicit_steps(G, _values(g, phi), cfg, history))


def evolve_density(
    g: MetricGraph, A_fp: SparseOperator, m0: GridFunction, cfg: ParabolicConfig | None = None,
    history: list | None = None,
) -> GridFunction:
    """Implicit Euler for ``dm/dt = A m``; conserves ``int m`` exactly."""
    cfg = cfg or ParabolicConfig()
    return GridFunction(g, _implicit_steps(A_fp.matrix, _values(g, m0), cfg, history))


def flux_residual(g: MetricGraph, H: Hamiltonian, u: GridFunction, m: GridFunction, order: int = 2) -> np.ndarray:
    """Literal vertex flux sums ``sum_j [nu_j d_j m(v) + b_j(v) m(v)]``.

    Evaluated with one-sided stencils; the advective flux is oriented into
    the edge (``b = dH/dp`` taken in the edge coordinate and sign-flipped at
    edge ends).  A consistency diagnostic, not an enforced condition.
    """
    out = np.zeros(g.n_vertices)
    mv = m.values
    for v in range(g.n_vertices):
        for j, end in g.incidence[v]:
            e = g.edges[j]
            cols, coef = oriented_stencil(g, v, j, end, order)
            dm = float(np.dot(coef, mv[cols]))
            du = edge_slopes(g, u, j)
            if end == START:
                b = float(H.dp(np.array([j]), np.array([0.0]), du[[0]])[0])
            else:
                b = -float(H.dp(np.array([j]), np.array([e.length]), du[[-1]])[0])
            out[v] += e.diffusion * dm + b * mv[g.vertex_dof(v)]
    return out


def pairing(g: MetricGraph, a: GridFunction, b: GridFunction) -> float:
    """``int a b dx`` with the trapezoid weights."""
    return integrate(g, a * b)
