"""Quadrature on the torus [-pi, pi]^d for integrands built from the symbol.

Two schemes live here:

* periodic trapezoid rules on n^d grids, with grid points sharing a symbol
  value merged into one weighted node ("spectral measure").  Everything of
  the form (2 pi)^-d int w(theta) h(phi(theta)) d theta then costs one pass
  over the distinct symbol values;
* a smooth partition of unity for integrands with a singularity at theta=0:
  a radial bump handled in polar coordinates with geometrically graded
  panels, the complement handled by the periodic trapezoid rule.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss

from .kernel import WalkKernel, symbol_grid, symbol_values


class QuadratureError(RuntimeError):
    """Error estimate above tolerance; ``value`` holds the best estimate."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


MAX_GRID = {1: 1 << 21, 2: 2048, 3: 128}


def grid_indices(n: int, d: int) -> np.ndarray:
    """Integer index arrays of the n^d grid, shape (d, n, ..., n)."""
    return np.indices((n,) * d)


def _cos_weights(n: int, d: int, x) -> np.ndarray:
    idx = grid_indices(n, d)
    dot = np.zeros((n,) * d, dtype=np.int64)
    for i, xi in enumerate(np.atleast_1d(x)):
        if xi:
            dot += idx[i] * int(xi)
    return np.cos(2.0 * np.pi * (dot % n) / n)


def spectral_measure(k: WalkKernel, n: int, weight=None):
    """Distinct symbol values on the n^d grid with aggregated weights.

    Returns ``(values, weights)`` with (2 pi)^-d int w(theta) h(phi) d theta
    approximated by ``sum(weights * h(values))``.  ``weight`` is an array on
    the grid (default ones).
    """
    phi = symbol_grid(k, n).ravel()
    w = np.ones_like(phi) if weight is None else np.asarray(weight, dtype=float).ravel()
    scale = max(1.0, float(np.max(np.abs(phi))))
    key = np.rint(phi / scale * 1e12).astype(np.int64)
    uniq, inv = np.unique(key, return_inverse=True)
    counts = np.bincount(inv)
    values = np.bincount(inv, weights=phi) / counts
    weights = np.bincount(inv, weights=w) / phi.size
    keep = weights != 0.0
    return values[keep], weights[keep]


def displacement_weight(k: WalkKernel, n: int, x, kind: str = "cos"):
    """Grid weight cos<theta,x> or 1 - cos<theta,x>, None for trivial."""
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if kind == "cos":
        return None if not x.any() else _cos_weights(n, k.d, x)
    if kind == "one_minus_cos":
        return 1.0 - _cos_weights(n, k.d, x)
    raise ValueError(kind)


def start_grid(k: WalkKernel) -> int:
    base = {1: 256, 2: 64}.get(k.d, 16)
    if k.trunc_radius:
        base = max(base, 1 << int(math.ceil(math.log2(2 * k.trunc_radius + 1))))
    return min(base, MAX_GRID.get(k.d, 64))


def refine(evaluate, n0: int, nmax: int, rtol: float, atol: float = 0.0):
    """Double the grid until successive trapezoid values agree.

    ``evaluate(n)`` returns an array.  Returns ``(value, error, n)`` with the
    finer value and the elementwise difference as error estimate; raises
    QuadratureError carrying the partial value when ``nmax`` is reached.
    """
    n = n0
    prev = np.asarray(evaluate(n), dtype=float)
    while True:
        if 2 * n > nmax:
            err = np.full_like(prev, np.inf)
            raise QuadratureError(f"no convergence up to grid size {n}", prev, err)
        cur = np.asarray(evaluate(2 * n), dtype=float)
        err = np.abs(cur - prev)
        if np.all(err <= atol + rtol * np.abs(cur)):
            return cur, err, 2 * n
        prev, n = cur, 2 * n


# ---------------------------------------------------------------------------
# partition of unity around the origin


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)

    def bump(y):
        safe = np.where(y > 0, y, 1.0)
        return np.where(y > 0, np.exp(-1.0 / safe), 0.0)

    a, b = bump(x), bump(1.0 - x)
    return a / (a + b)


class Partition:
    """chi(r) = 1 near the origin, 0 beyond ``r_out``; smooth in between."""

    def __init__(self, r_in: float = 0.35 * np.pi, r_out: float = 0.95 * np.pi):
        self.r_in, self.r_out = r_in, r_out

    def __call__(self, r):
        return 1.0 - smooth_step((np.asarray(r) - self.r_in) / (self.r_out - self.r_in))


def sphere_rule(d: int, n_ang: int):
    """Nodes and weights for the unit sphere S^(d-1) (total weight = area)."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        a = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        return np.stack([np.cos(a), np.sin(a)], axis=1), np.full(n_ang, 2 * np.pi / n_ang)
    if d == 3:
        n_pol = max(4, n_ang // 2)
        ct, wt = leggauss(n_pol)
        az = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        st = np.sqrt(1 - ct ** 2)
        u = np.stack([
            np.outer(st, np.cos(az)), np.outer(st, np.sin(az)), np.outer(ct, np.ones(n_ang))
        ], axis=-1).reshape(-1, 3)
        return u, np.repeat(wt, n_ang) * (2 * np.pi / n_ang)
    raise NotImplementedError("polar quadrature is implemented for d <= 3")


def radial_rule(r_out: float, r_min: float, q: float = 0.5, n_gl: int = 16,
                max_width: float = np.inf):
    """Gauss-Legendre on panels [r q^(j+1), r q^j] down to ``r_min``.

    Panels wider than ``max_width`` are split evenly, which keeps oscillatory
    integrands (long-range kernels, large displacements) resolved.
    """
    x, w = leggauss(n_gl)
    n_pan = max(1, int(math.ceil(math.log(r_min / r_out) / math.log(q))))
    edges = r_out * q ** np.arange(n_pan + 1)
    if np.isfinite(max_width):
        pieces = []
        for a, b in zip(edges[1:], edges[:-1]):
            m = max(1, int(math.ceil((b - a) / max_width)))
            pieces.append(np.linspace(b, a, m + 1)[:-1])
        edges = np.concatenate(pieces + [edges[-1:]])
    lo, hi = edges[1:], edges[:-1]
    r = (0.5 * (hi + lo))[:, None] + (0.5 * (hi - lo))[:, None] * x[None, :]
    wr = (0.5 * (hi - lo))[:, None] * w[None, :]
    return r.ravel(), wr.ravel(), float(edges[-1])


def singular_average(k: WalkKernel, lam: float, x, n_rest: int, n_ang: int,
                     n_gl: int = 24, partition: Partition | None = None,
                     max_width: float = np.inf) -> float:
    """(2 pi)^-d int cos<theta,x> / (lam - phi(theta)) d theta.

    The piece inside the partition bump is integrated in polar coordinates
    on graded panels; [0, r_min] is added in closed form from the small-theta
    model -phi ~ eta(u) r^kappa.  Requires d > kappa when lam = 0.
    """
    d = k.d
    part = partition or Partition()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kappa = k.small_theta_exponent

    # complement of the bump: periodic trapezoid
    idx = grid_indices(n_rest, d)
    th = 2.0 * np.pi * np.where(idx > n_rest // 2, idx - n_rest, idx) / n_rest
    r = np.sqrt(np.sum(th * th, axis=0))
    outer = 1.0 - part(r)
    phi = symbol_grid(k, n_rest)
    cosw = np.cos(np.tensordot(x, th, axes=(0, 0))) if x.any() else 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(outer > 0, outer * cosw / (lam - phi), 0.0)
    rest = float(np.mean(g))

    # bump: polar coordinates
    u, wu = sphere_rule(d, n_ang)
    if lam > 0:
        r_min = min(1e-6, (1e-16 * lam * d) ** (1.0 / d))
    else:
        r_min = 1e-7
    rr, wr, r_min = radial_rule(part.r_out, r_min, n_gl=n_gl, max_width=max_width)
    total = 0.0
    chi = part(rr)
    for j in range(0, len(u), 64):
        uj = u[j:j + 64]
        pts = rr[:, None, None] * uj[None, :, :]
        phi_p = symbol_values(k, pts)
        cos_p = np.cos(pts @ x) if x.any() else 1.0
        integrand = (chi * wr * rr ** (d - 1))[:, None] * cos_p / (lam - phi_p)
        total += float(np.sum(integrand * wu[j:j + 64][None, :]))
    # [0, r_min]
    eta = -symbol_values(k, r_min * u) / r_min ** kappa
    if lam > 0:
        inner = r_min ** d / (d * (lam + eta * r_min ** kappa * d / (d + kappa)))
    else:
        inner = r_min ** (d - kappa) / ((d - kappa) * eta)
    total += float(np.sum(wu * inner))
    return rest + total / (2.0 * np.pi) ** d


def support_reach(k: WalkKernel) -> float:
    """Largest |z| carried by the tabulated kernel (1 for closed-form symbols)."""
    if k.is_completed or len(k.vectors) == 0:
        return 1.0
    return float(np.max(np.linalg.norm(k.vectors, axis=1)))


def line_rule(r_min: float = 1e-12, n_gl: int = 24, max_width: float = np.pi / 4):
    """Nodes/weights on (0, pi] for (1/pi) int_0^pi h(theta) d theta.

    Graded panels resolve integrands sharply peaked at the origin, whatever
    the peak width down to ``r_min``.  A single node at r_min/2 stands in for
    [0, r_min].
    """
    r, w, r_min = radial_rule(np.pi, r_min, n_gl=n_gl, max_width=max_width)
    r = np.append(r, 0.5 * r_min)
    w = np.append(w, r_min)
    return r, w / np.pi
