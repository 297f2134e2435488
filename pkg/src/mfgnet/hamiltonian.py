"""Edge Hamiltonians and their monotone two-slope discretizations.

All methods are vectorized over nodes: ``edge`` is an integer array of edge
indices, ``x`` the arclength abscissae, ``p`` the slopes.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Hamiltonian:
    """Interface for a family of per-edge Hamiltonians ``H_j(x, p)``.

    Subclasses provide :meth:`value` and :meth:`dp`.  The default
    :meth:`numerical` is the Engquist-Osher flux built around the minimiser
    of ``p -> H(x, p)``; it is monotone whenever ``H`` decreases left of the
    minimiser and increases right of it (true for convex ``H``).

    ``scheme="centered"`` swaps in ``H(x, (p- + p+)/2)``, which is consistent
    but not monotone.
    """

    convex: bool = True
    growth: tuple[float, float] | None = None
    scheme: str = "upwind"

    def value(self, edge, x, p):
        raise NotImplementedError

    def dp(self, edge, x, p):
        raise NotImplementedError

    def argmin(self, edge, x):
        edge = np.asarray(edge)
        x = np.asarray(x, dtype=float)
        cache = self.__dict__.setdefault("_argmin_cache", {})
        out = np.empty(x.shape)
        for idx, (j, xx) in enumerate(zip(edge.ravel(), x.ravel())):
            key = (int(j), float(xx))
            if key not in cache:
                res = minimize_scalar(
                    lambda q: float(self.value(np.array([j]), np.array([xx]), np.array([q]))[0]),
                    bracket=(-1.0, 1.0),
                    options={"xtol": 1e-13},
                )
                cache[key] = float(res.x)
            out.flat[idx] = cache[key]
        return out

    def numerical(self, edge, x, pm, pp):
        """Return ``(H_num, dH_num/dp-, dH_num/dp+)``."""
        if self.scheme == "centered":
            pbar = 0.5 * (pm + pp)
            d = 0.5 * self.dp(edge, x, pbar)
            return self.value(edge, x, pbar), d, d
        pstar = self.argmin(edge, x)
        qm = np.maximum(pm, pstar)
        qp = np.minimum(pp, pstar)
        val = self.value(edge, x, qm) + self.value(edge, x, qp) - self.value(edge, x, pstar)
        dpm = np.where(pm > pstar, self.dp(edge, x, qm), 0.0)
        dpp = np.where(pp < pstar, self.dp(edge, x, qp), 0.0)
        return val, dpm, dpp


    def one_sided(self, edge, x, q, backward: bool):
        """One branch of the flux at a single face slope ``q``, zero at ``q = 0``.

        ``backward=True`` is the branch fed by ``p-`` (the face lies behind
        the node), otherwise the ``p+`` branch.  Returns ``(value, d/dq)``.
        Used for the half-cells at vertices.
        """
        if self.scheme == "centered":
            return 0.5 * (self.value(edge, x, q) - self.value(edge, x, 0 * q)), 0.5 * self.dp(edge, x, q)
        pstar = self.argmin(edge, x)
        if backward:
            a = np.maximum(q, pstar)
            val = self.value(edge, x, a) - self.value(edge, x, np.maximum(0.0, pstar))
            return val, np.where(q > pstar, self.dp(edge, x, a), 0.0)
        a = np.minimum(q, pstar)
        val = self.value(edge, x, a) - self.value(edge, x, np.minimum(0.0, pstar))
        return val, np.where(q < pstar, self.dp(edge, x, a), 0.0)


class QuadraticHamiltonian(Hamiltonian):
    """``H_j(x, p) = kappa_j p^2 + c(x) p + f0(x)``.

    The discretization splits the quadratic and linear parts::

        kappa (max(p-, 0)^2 + min(p+, 0)^2) + max(c, 0) p- + min(c, 0) p+ + f0
    """

    def __init__(
        self,
        kappa: float | Sequence[float] = 0.5,
        c: Coefficient | None = None,
        f0: Coefficient | None = None,
        scheme: str = "upwind",
    ):
        self.kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        if np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive")
        self.c = c
        self.f0 = f0
        self.scheme = scheme
        kmin, kmax = float(self.kappa.min()), float(self.kappa.max())
        self.growth = (kmin / 2, max(kmax + 1.0, 1.0))

    def _k(self, edge):
        return self.kappa[edge] if self.kappa.size > 1 else self.kappa[0]

    def _c(self, edge, x):
        return np.zeros(np.shape(x)) if self.c is None else np.asarray(self.c(edge, x), dtype=float)

    def _f0(self, edge, x):
        return np.zeros(np.shape(x)) if self.f0 is None else np.asarray(self.f0(edge, x), dtype=float)

    def value(self, edge, x, p):
        return self._k(edge) * p**2 + self._c(edge, x) * p + self._f0(edge, x)

    def dp(self, edge, x, p):
        return 2.0 * self._k(edge) * p + self._c(edge, x)

    def argmin(self, edge, x):
        return -self._c(edge, x) / (2.0 * self._k(edge))

    def numerical(self, edge, x, pm, pp):
        if self.scheme == "centered":
            return super().numerical(edge, x, pm, pp)
        k = self._k(edge)
        c = self._c(edge, x)
        pos, neg = np.maximum(pm, 0.0), np.minimum(pp, 0.0)
        cp, cn = np.maximum(c, 0.0), np.minimum(c, 0.0)
        val = k * (pos**2 + neg**2) + cp * pm + cn * pp + self._f0(edge, x)
        return val, 2.0 * k * pos + cp, 2.0 * k * neg + cn

    def one_sided(self, edge, x, q, backward: bool):
        if self.scheme == "centered":
            return super().one_sided(edge, x, q, backward)
        k = self._k(edge)
        c = self._c(edge, x)
        if backward:
            qq, cc = np.maximum(q, 0.0), np.maximum(c, 0.0)
        else:
            qq, cc = np.minimum(q, 0.0), np.minimum(c, 0.0)
        return k * qq**2 + cc * q, 2.0 * k * qq + cc


class CallbackHamiltonian(Hamiltonian):
    """User-supplied ``H`` and ``dH/dp``; ``argmin`` is optional."""

    def __init__(
        self,
        value: Callable,
        dp: Callable,
        argmin: Callable | None = None,
        convex: bool = True,
        growth: tuple[float, float] | None = None,
        scheme: str = "upwind",
    ):
        self._value = value
        self._dp = dp
        self._argmin = argmin
        self.convex = convex
        self.growth = growth
        self.scheme = scheme

    def value(self, edge, x, p):
        return np.asarray(self._value(edge, x, p), dtype=float)

    def dp(self, edge, x, p):
        return np.asarray(self._dp(edge, x, p), dtype=float)

    def argmin(self, edge, x):
        if self._argmin is None:
            return super().argmin(edge, x)
        return np.asarray(self._argmin(edge, x), dtype=float) * np.ones(np.shape(x))


def clipped(H: Hamiltonian, bound: float) -> CallbackHamiltonian:
    """Smoothly saturate ``H`` to ``(-bound, bound)`` via ``bound * tanh(H / bound)``.

    The result is no longer convex but keeps the minimiser of ``H`` and is
    monotone on either side of it, so the upwind flux stays monotone.
    """

    def value(edge, x, p):
        return bound * np.tanh(H.value(edge, x, p) / bound)

    def dp(edge, x, p):
        t = np.tanh(H.value(edge, x, p) / bound)
        return (1.0 - t**2) * H.dp(edge, x, p)

    return CallbackHamiltonian(value, dp, argmin=H.argmin, convex=False, growth=None, scheme=H.scheme)


def numerical_hamiltonian(H: Hamiltonian, j: int, x: float, p_minus: float, p_plus: float) -> float:
    val, _, _ = H.numerical(np.array([j]), np.array([x], dtype=float), np.array([p_minus], dtype=float),
                            np.array([p_plus], dtype=float))
    return float(val[0])


def peclet_check(H: Hamiltonian, graph, slopes_bound: float = 10.0) -> bool:
    """Warn if the centered scheme violates ``h sup|dH/dp| <= 2 nu`` on sampled slopes."""
    tab = graph.interior
    ok = True
    for p in np.linspace(-slopes_bound, slopes_bound, 21):
        a = np.abs(H.dp(tab["edge"], tab["x"], np.full(tab["x"].shape, p)))
        if np.any(tab["h"] * a > 2 * tab["nu"]):
            ok = False
            break
    if not ok:
        warnings.warn("centered scheme: mesh Peclet number exceeds 2 on sampled slopes", RuntimeWarning, stacklevel=2)
    return ok


def check_convexity(H: Hamiltonian, graph, n_samples: int = 200, seed: int = 0, span: float = 5.0) -> bool:
    """Spot-check midpoint convexity on random secants."""
    rng = np.random.default_rng(seed)
    tab = graph.interior
    idx = rng.integers(0, tab["x"].size, n_samples)
    edge, x = tab["edge"][idx], tab["x"][idx]
    p, q = rng.uniform(-span, span, (2, n_samples))
    mid = H.value(edge, x, 0.5 * (p + q))
    chord = 0.5 * (H.value(edge, x, p) + H.value(edge, x, q))
    return bool(np.all(mid <= chord + 1e-12 * (1 + np.abs(chord))))


def check_growth(H: Hamiltonian, graph, n_samples: int = 200, seed: int = 0, span: float = 10.0) -> bool:
    """Diagnostic: ``delta p^2 - C <= H <= C p^2 + C`` on samples (needs ``H.growth``)."""
    if H.growth is None:
        return False
    delta, C = H.growth
    rng = np.random.default_rng(seed)
    tab = graph.interior
    idx = rng.integers(0, tab["x"].size, n_samples)
    p = rng.uniform(-span, span, n_samples)
    val = H.value(tab["edge"][idx], tab["x"][idx], p)
    return bool(np.all(delta * p**2 - C <= val) and np.all(val <= C * p**2 + C))


# -- coefficient helpers (for c(x), f0(x), right-hand sides) --------------------


def per_edge_constant(values: Sequence[float]) -> Coefficient:
    vals = np.asarray(values, dtype=float)
    return lambda edge, x: vals[edge] * np.ones(np.shape(x))


def sampled(graph, profiles: Sequence[np.ndarray]) -> Coefficient:
    """Piecewise-linear interpolation of per-edge nodal samples."""
    nodes = [e.nodes for e in graph.edges]
    profs = [np.asarray(p, dtype=float) for p in profiles]

    def fn(edge, x):
        edge = np.broadcast_to(np.asarray(edge), np.shape(x))
        out = np.empty(np.shape(x))
        for j in np.unique(edge):
            sel = edge == j
            out[sel] = np.interp(np.asarray(x)[sel], nodes[j], profs[j])
        return out

    return fn


def builtin(name: str, lengths: Sequence[float], **params) -> Coefficient:
    """Named edge profiles: ``constant``, ``sine``, ``bump``.

    ``sine``: ``amplitude * sin(2 pi periods x / l + phase) + offset``.
    ``bump``: ``amplitude * exp(-((x / l - center) / width)^2) + offset``.
    """
    ls = np.asarray(lengths, dtype=float)
    offset = float(params.get("offset", 0.0))
    if name == "constant":
        v = float(params.get("value", 0.0))
        return lambda edge, x: np.full(np.shape(x), v)
    if name == "sine":
        a = float(params.get("amplitude", 1.0))
        k = float(params.get("periods", 1.0))
        ph = float(params.get("phase", 0.0))
        return lambda edge, x: a * np.sin(2 * np.pi * k * np.asarray(x) / ls[edge] + ph) + offset
    if name == "bump":
        a = float(params.get("amplitude", 1.0))
        c0 = float(params.get("center", 0.5))
        w = float(params.get("width", 0.1))
        return lambda edge, x: a * np.exp(-(((np.asarray(x) / ls[edge]) - c0) / w) ** 2) + offset
    raise ValueError(f"unknown builtin profile {name!r}")


def piecewise(coeffs: Sequence[Coefficient | None]) -> Coefficient:
    """Combine one coefficient per edge (``None`` means zero) into one."""

    def fn(edge, x):
        edge = np.broadcast_to(np.asarray(edge), np.shape(x))
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.shape(x))
        for j in np.unique(edge):
            if coeffs[j] is not None:
                sel = edge == j
                out[sel] = coeffs[j](np.full(sel.sum(), j), x[sel])
        return out

    return fn
