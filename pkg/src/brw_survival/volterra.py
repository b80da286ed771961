"""Nonlinear Volterra equations for survival and presence probabilities.

All three equations share the form

    g(t) = a(t) + sigma * int_0^t p(t - s) N(g(s)) ds

with N(g) = f(1 - g) for Q and q (sigma = -1) and N(g) = f(g) for the
Laplace functional F (sigma = +1).  The convolution is discretised by
product integration: N is interpolated linearly between grid nodes and the
panel integrals of p against 1 and (v - A) are taken from the spectral rule,
which makes the scheme second order on any grid.  The implicit value at each
new node solves a scalar polynomial equation by Newton's method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .branching import BranchingLaw, f_derivative, f_eval
from .kernel import WalkKernel
from .transition import PropagatorTable, _lattice

Q_TOTAL = "Q_total"
Q_LOCAL = "q_local"
F_LAPLACE = "F_laplace"


class VolterraError(RuntimeError):
    """Step failure or a solution leaving [0, 1]; carries the step index."""

    def __init__(self, message, step=None, values=None):
        super().__init__(message)
        self.step = step
        self.values = values


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes starting at t = 0."""

    nodes: np.ndarray
    scheme: str = "custom"

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", t)
        if t.ndim != 1 or t.size < 3:
            raise ValueError("a time grid needs at least three nodes")
        if t[0] != 0.0:
            raise ValueError("a time grid must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must be strictly increasing")

    @classmethod
    def uniform(cls, T: float, h: float) -> "TimeGrid":
        n = int(round(T / h))
        if n < 2 or abs(n * h - T) > 1e-9 * T:
            raise ValueError("T must be a multiple of h with at least two steps")
        return cls(np.arange(n + 1) * h, "uniform")

    @classmethod
    def geometric(cls, T: float, h: float = 0.05, t_switch: float = 10.0,
                  ratio: float = 1.1) -> "TimeGrid":
        """Uniform step ``h`` up to ``t_switch``, then nodes growing by ``ratio``.

        The step grows by at most a factor ``ratio`` per node, so the switch
        from the uniform part is gradual; far out the nodes are geometric.
        """
        if T <= t_switch:
            return cls.uniform(T, h)
        t = list(np.arange(int(round(t_switch / h)) + 1) * h)
        step = h
        while t[-1] < T:
            step = min(step * ratio, (ratio - 1.0) * t[-1])
            nxt = t[-1] + step
            if nxt > T or T - nxt < 0.5 * step:
                nxt = T
            t.append(nxt)
        return cls(np.array(t), "geometric")

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size


@dataclass
class SurvivalCurve:
    """Solution values on a grid with per-step solver diagnostics."""

    grid: TimeGrid
    values: np.ndarray
    kind: str
    x: tuple
    z: float | None = None
    solver_meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def at(self, t) -> np.ndarray:
        """Linear interpolation between nodes."""
        return np.interp(t, self.grid.nodes, self.values)


# ---------------------------------------------------------------------------
# product-integration weights


class ConvolutionWeights:
    """Row weights W[i, j] with int_0^{t_i} p(t_i - s) N(s) ds = sum_j W[i,j] N_j.

    Panel moments are computed once per distinct (offset, width) pair, so a
    uniform grid costs O(M) spectral sums and a general grid O(M^2).
    """

    def __init__(self, table: PropagatorTable, grid: TimeGrid):
        t = grid.nodes
        M = t.size
        hs = np.diff(t)
        ii, jj = np.tril_indices(M - 1)
        ii = ii + 1  # rows 1..M-1, panels j = 0..i-1
        A = t[ii] - t[jj + 1]
        h = hs[jj]
        scale = max(grid.T, 1.0)
        key = np.stack([np.rint(A / scale * 1e13), np.rint(h / scale * 1e13)], axis=1)
        uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        I0u, J1u = table.panel_moments(np.maximum(A[first], 0.0), h[first])
        I0, J1 = I0u[inv], J1u[inv]
        left = J1 / h           # weight on N_j
        right = I0 - left       # weight on N_{j+1}
        W = np.zeros((M, M))
        np.add.at(W, (ii, jj), left)
        np.add.at(W, (ii, jj + 1), right)
        self.W = W
        self.n_pairs = len(uniq)


# ---------------------------------------------------------------------------
# solvers


def _newton(c, w, sigma, N, dN, g0, tol, max_iter):
    """Solve g = c + sigma w N(g); returns (g, iterations, last change)."""
    g = g0
    delta = math.inf
    for it in range(1, max_iter + 1):
        r = g - c - sigma * w * N(g)
        dr = 1.0 - sigma * w * dN(g)
        step = r / dr if dr != 0 else r
        # keep Newton iterates from wandering far outside [0, 1]
        new = min(max(g - step, -0.5), 1.5)
        delta = abs(new - g)
        g = new
        if delta < tol:
            return g, it, delta
    return g, max_iter, delta


def _solve_origin(W, a, sigma, N, dN, g_first, tol, max_iter):
    M = W.shape[0]
    g = np.empty(M)
    g[0] = g_first
    Nv = np.empty(M)
    Nv[0] = N(g[0])
    iters = np.zeros(M, dtype=np.int64)
    changes = np.zeros(M)
    for i in range(1, M):
        c = a[i] + sigma * float(W[i, :i] @ Nv[:i])
        gi, it, ch = _newton(c, W[i, i], sigma, N, dN, g[i - 1], tol, max_iter)
        if ch >= tol:
            raise VolterraError(f"nonlinear step {i} did not converge (change {ch:.3g})", i, g[:i])
        g[i], Nv[i] = gi, N(gi)
        iters[i], changes[i] = it, ch
    return g, Nv, iters, changes


def _check_range(values, kind, bound_tol=1e-9):
    lo, hi = float(values.min()), float(values.max())
    if lo < -bound_tol or hi > 1 + bound_tol:
        i = int(np.argmax((values < -bound_tol) | (values > 1 + bound_tol)))
        raise VolterraError(f"{kind} left [0, 1] at step {i} (value {values[i]:.6g}); "
                            "refine the time grid", i, values)


def _monotone_violation(values, direction):
    """Largest step against ``direction`` (+1 non-decreasing, -1 non-increasing)."""
    if direction == 0 or values.size < 2:
        return 0.0
    return float(max(0.0, np.max(-direction * np.diff(values))))


def _table(k, x, grid, tables):
    key = tuple(int(c) for c in _lattice(x, k.d))
    if tables is not None and key in tables and tables[key].t_max >= grid.T:
        return tables[key]
    tab = PropagatorTable(k, key, grid.T, atol=1e-10)
    if tables is not None:
        tables[key] = tab
    return tab


def _solve(k, law, grid, kind, x, z, tol, max_iter, tables):
    x = _lattice(x, k.d)
    origin = _table(k, None, grid, tables)
    W0 = ConvolutionWeights(origin, grid).W
    t = grid.nodes
    if kind == F_LAPLACE:
        ez = 0.0 if math.isinf(z) else math.exp(-z)
        sigma = 1.0
        a = np.full(t.size, ez)
        g_first = ez

        def N(g):
            return float(f_eval(law, g))

        def dN(g):
            return float(f_derivative(law, 1, g))
    else:
        sigma = -1.0
        a = origin.p(t) if kind == Q_LOCAL else np.ones(t.size)
        g_first = 1.0

        def N(g):
            return float(f_eval(law, 1.0 - g))

        def dN(g):
            return -float(f_derivative(law, 1, 1.0 - g))

    g0, N0, iters, changes = _solve_origin(W0, a, sigma, N, dN, g_first, tol, max_iter)
    meta = {"iterations": iters, "step_change": changes, "tolerance": tol,
            "rule_resolution": origin.rule.resolution}
    if x.any():
        tab = _table(k, x, grid, tables)
        Wx = ConvolutionWeights(tab, grid).W
        a_x = tab.p(t) if kind == Q_LOCAL else a
        g = a_x + sigma * (Wx @ N0)
        g[0] = g_first if kind != Q_LOCAL else 0.0
        meta["origin_values"] = g0
    else:
        g = g0
    _check_range(g, kind)
    return g, meta


def solve_Q_total(k: WalkKernel, law: BranchingLaw, grid: TimeGrid, x=None, *,
                  tol: float = 1e-10, max_iter: int = 100, tables: dict | None = None) -> SurvivalCurve:
    """Survival probability Q(t, x) of the whole population.

    The x = 0 equation is solved self-consistently; Q(., x) for x != 0
    follows from an explicit convolution with the stored Q(., 0).
    ``tables`` is an optional dict used to share propagator tables between
    calls.
    """
    x = _lattice(x, k.d)
    vals, meta = _solve(k, law, grid, Q_TOTAL, x, None, tol, max_iter, tables)
    meta["monotone_violation"] = _monotone_violation(vals, -1)
    return SurvivalCurve(grid, vals, Q_TOTAL, tuple(int(c) for c in x), None, meta)


def solve_q_local(k: WalkKernel, law: BranchingLaw, grid: TimeGrid, *,
                  tol: float = 1e-10, max_iter: int = 100, tables: dict | None = None) -> SurvivalCurve:
    """Probability that some particle sits at the origin at time t (start at 0)."""
    vals, meta = _solve(k, law, grid, Q_LOCAL, None, None, tol, max_iter, tables)
    return SurvivalCurve(grid, vals, Q_LOCAL, (0,) * k.d, None, meta)


def solve_F(k: WalkKernel, law: BranchingLaw, z: float, grid: TimeGrid, x=None, *,
            tol: float = 1e-10, max_iter: int = 100, tables: dict | None = None) -> SurvivalCurve:
    """Laplace functional F(z, t, x) = E_x exp(-z mu_t); z = inf gives P(mu_t = 0)."""
    if z < 0:
        raise ValueError("z must be non-negative")
    x = _lattice(x, k.d)
    vals, meta = _solve(k, law, grid, F_LAPLACE, x, z, tol, max_iter, tables)
    ez = 0.0 if math.isinf(z) else math.exp(-z)
    direction = int(np.sign(f_eval(law, ez)))
    meta["direction"] = direction
    meta["monotone_violation"] = _monotone_violation(vals, direction)
    return SurvivalCurve(grid, vals, F_LAPLACE, tuple(int(c) for c in x), float(z), meta)


# ---------------------------------------------------------------------------
# asymptotic fits


@dataclass
class AsymptoteFit:
    model: str
    exponent: float | None
    amplitude: float
    residual: float
    n_nodes: int
    window: tuple


def fit_asymptote(curve: SurvivalCurve, model: str = "power", window=None,
                  exponent: float | None = None) -> AsymptoteFit:
    """Least-squares fit of the curve tail.

    ``power``: log Q = log A + p log t; ``logpower``: log Q = log A + p log log t;
    ``constant``: plateau mean.  ``window`` is a (t_lo, t_hi) range (default:
    the last decade of the grid).  Passing ``exponent`` holds p fixed and fits
    only the amplitude.  The residual is the rms deviation in log Q (in Q for
    the constant model).
    """
    t = curve.grid.nodes
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    lo, hi = window
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    n = int(sel.sum())
    if n < 8:
        raise ValueError(f"fit window holds {n} nodes; at least 8 are needed")
    tt, q = t[sel], curve.values[sel]
    if model == "constant":
        mean = float(q.mean())
        return AsymptoteFit(model, None, mean, float(np.sqrt(np.mean((q - mean) ** 2))), n, (lo, hi))
    if np.any(q <= 0):
        raise ValueError("non-positive values inside the fit window")
    if model == "power":
        xs = np.log(tt)
    elif model == "logpower":
        if tt[0] <= 1.0:
            raise ValueError("logpower fits need t > 1")
        xs = np.log(np.log(tt))
    else:
        raise ValueError(f"unknown model {model!r}")
    ys = np.log(q)
    if exponent is None:
        p, c = np.polyfit(xs, ys, 1)
    else:
        p = float(exponent)
        c = float(np.mean(ys - p * xs))
    res = float(np.sqrt(np.mean((ys - (c + p * xs)) ** 2)))
    return AsymptoteFit(model, float(p), float(math.exp(c)), res, n, (lo, hi))
