"""Symmetric jump kernels on Z^d and their Fourier symbols.

A kernel is the infinitesimal jump-rate function a(z) of a continuous-time
random walk. Off-diagonal rates are stored as an integer array of support
vectors plus a matching weight array; the diagonal a(0) is always recomputed
from the off-diagonal sum so that the rows sum to zero.

Two families are supported:

* finite-variance kernels with an explicit, finite weight table;
* heavy-tailed kernels a(z) = c H(z/|z|) / |z|^(d+alpha) on the ball
  0 < |z| <= R.  With ``tail="complete"`` (d = 1 only) the rates beyond R are
  kept as well, in closed form, so that the symbol has the exact
  |theta|^alpha behaviour at the origin instead of the theta^2 behaviour
  that any truncation produces.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

__all__ = [
    "KernelError",
    "WalkKernel",
    "SymbolFit",
    "DirectionTable",
    "build_finite_variance_kernel",
    "build_heavy_tail_kernel",
    "nearest_neighbour_kernel",
    "symbol_values",
    "default_radius",
    "fourier_symbol",
    "fit_symbol_tail",
    "gaussian_bound_gamma",
    "dump_kernel_csv",
    "kernel_checks",
]

SYMMETRY_RTOL = 1e-12


class KernelError(ValueError):
    """A kernel description violates one of the walk invariants."""


def default_radius(d: int) -> int:
    """Default truncation radius for heavy-tailed kernels."""
    return {1: 64, 2: 32}.get(d, 16)


# ---------------------------------------------------------------------------
# direction functions


class DirectionTable:
    """Direction function given by samples on the unit sphere.

    Lookup returns the value at the nearest sampled direction (largest dot
    product).
    """

    def __init__(self, directions, values, d: int | None = None):
        dirs = np.asarray(directions, dtype=float)
        dirs = dirs.reshape(-1, d) if d is not None else np.atleast_2d(dirs)
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise KernelError("direction table contains a zero vector")
        self.directions = dirs / norms[:, None]
        self.values = np.asarray(values, dtype=float).ravel()
        if self.values.shape[0] != self.directions.shape[0]:
            raise KernelError("direction table: directions and values differ in length")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, self.directions.shape[1])
        idx = np.argmax(flat @ self.directions.T, axis=1)
        out = self.values[idx]
        return out.reshape(u.shape[:-1]) if u.ndim > 1 else float(out[0])

    def __repr__(self):
        return f"DirectionTable(n={len(self.values)})"


def _as_direction_function(H, d: int) -> Callable:
    if H is None:
        H = 1.0
    if callable(H):
        return H
    if isinstance(H, (int, float)):
        value = float(H)

        def const(u, _v=value):
            u = np.asarray(u, dtype=float)
            return np.full(u.shape[:-1], _v) if u.ndim > 1 else _v

        const.constant = value
        return const
    if isinstance(H, Mapping):
        keys = [np.atleast_1d(np.asarray(k, dtype=float)) for k in H]
        return DirectionTable(keys, list(H.values()), d)
    directions, values = H
    return DirectionTable(directions, values, d)


def _eval_direction(H: Callable, units: np.ndarray) -> np.ndarray:
    """Evaluate H row by row, accepting scalar-only callables too."""
    try:
        out = np.asarray(H(units), dtype=float)
        if out.shape == (units.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(H(u)) for u in units])


# ---------------------------------------------------------------------------
# kernel type


@dataclass(frozen=True, eq=False)
class WalkKernel:
    """Jump-rate function of a symmetric, homogeneous, irreducible walk.

    Attributes
    ----------
    d : int
        Lattice dimension.
    vectors : ndarray of int, shape (n, d)
        Support of a(.) away from the origin.
    weights : ndarray, shape (n,)
        Rates a(z) for the rows of ``vectors``.
    diag : float
        a(0) = -(sum of all off-diagonal rates, including a completed tail).
    kind : {"finite-variance", "heavy-tail"}
    tail_alpha, tail_H, trunc_radius, scale :
        Heavy-tail metadata; unset for finite-variance kernels.
    tail_mode : {"truncate", "complete"}
        Whether rates beyond ``trunc_radius`` are dropped or kept analytically.
    tail_mass : float
        Total rate carried by |z| > R (zero unless ``tail_mode="complete"``).
    """

    d: int
    vectors: np.ndarray
    weights: np.ndarray
    diag: float
    kind: str = "finite-variance"
    tail_alpha: float | None = None
    tail_H: Callable | None = None
    trunc_radius: int | None = None
    scale: float = 1.0
    tail_mode: str = "truncate"
    tail_mass: float = 0.0
    _half: tuple = field(default=None, repr=False)

    @property
    def rates(self) -> dict:
        """Off-diagonal rates as a mapping z -> a(z) (tuples as keys)."""
        return {tuple(int(c) for c in z): float(w) for z, w in zip(self.vectors, self.weights)}

    @property
    def jump_rate(self) -> float:
        """Total jump rate -a(0)."""
        return -self.diag

    @property
    def is_completed(self) -> bool:
        return self.tail_mode == "complete" and self.tail_mass > 0

    @property
    def tail_constant(self) -> float:
        """c*H for completed d=1 kernels: a(z) = const/|z|^(1+alpha) for |z| > R."""
        return self.scale * float(_eval_direction(self.tail_H, np.ones((1, 1)))[0])

    @property
    def small_theta_exponent(self) -> float:
        """Exponent kappa in -phi(theta) ~ eta |theta|^kappa at the origin."""
        return float(self.tail_alpha) if self.is_completed else 2.0

    def rate(self, z) -> float:
        z = tuple(np.atleast_1d(z).astype(int))
        if not any(z):
            return self.diag
        hit = np.all(self.vectors == np.asarray(z), axis=1)
        if hit.any():
            return float(self.weights[hit][0])
        if self.is_completed:
            r = abs(z[0])
            if r > self.trunc_radius:
                return self.tail_constant / r ** (1.0 + self.tail_alpha)
        return 0.0

    def half_support(self):
        """One representative of each {z, -z} pair and its rate."""
        if self._half is None:
            v = self.vectors
            first = np.argmax(v != 0, axis=1)
            keep = v[np.arange(len(v)), first] > 0
            object.__setattr__(self, "_half", (v[keep], self.weights[keep]))
        return self._half

    def second_moment_matrix(self) -> np.ndarray:
        """sum_z z z^T a(z) over the stored support."""
        v = self.vectors.astype(float)
        return (v * self.weights[:, None]).T @ v


def _as_vector(key, d: int) -> tuple:
    z = tuple(int(c) for c in np.atleast_1d(key))
    if len(z) != d:
        raise KernelError(f"support vector {key!r} does not have dimension {d}")
    return z


def _lattice_generates(vectors: np.ndarray, d: int) -> bool:
    """True when the integer span of ``vectors`` is all of Z^d.

    Integer row echelon form by extended-gcd elimination; the span is Z^d iff
    there are d pivots whose product has absolute value one.
    """
    basis: dict[int, list] = {}
    for row in vectors:
        v = [int(c) for c in row]
        for col in range(d):
            if v[col] == 0:
                continue
            if col not in basis:
                basis[col] = v
                break
            r = basis[col]
            g, x, y = _egcd(r[col], v[col])
            a_g, b_g = r[col] // g, v[col] // g
            basis[col] = [x * ri + y * vi for ri, vi in zip(r, v)]
            v = [b_g * ri - a_g * vi for ri, vi in zip(r, v)]
    if len(basis) < d:
        return False
    return math.prod(abs(basis[c][c]) for c in range(d)) == 1


def _egcd(a: int, b: int):
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a - (a // b) * b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    if a < 0:
        a, x0, y0 = -a, -x0, -y0
    return a, x0, y0


def _validate_support(d: int, table: dict) -> None:
    if not table:
        raise KernelError("empty support: the walk never jumps")
    for z, w in table.items():
        if not any(z):
            raise KernelError("the origin cannot carry an off-diagonal rate")
        if not np.isfinite(w) or w < 0:
            raise KernelError(f"negative or non-finite rate a{z} = {w}")
    for z, w in table.items():
        mz = tuple(-c for c in z)
        w2 = table.get(mz)
        if w2 is None or abs(w - w2) > SYMMETRY_RTOL * max(abs(w), abs(w2)):
            raise KernelError(f"symmetry violated: a{z} = {w} but a{mz} = {w2}")
    if not _lattice_generates(np.array(list(table)), d):
        raise KernelError("irreducibility violated: support does not generate Z^%d" % d)


def build_finite_variance_kernel(d: int, weights: Mapping) -> WalkKernel:
    """Kernel from an explicit symmetric weight table.

    Examples
    --------
    >>> k = build_finite_variance_kernel(1, {1: 0.5, -1: 0.5})
    >>> k.diag
    -1.0
    """
    if int(d) != d or d < 1:
        raise KernelError(f"dimension must be a positive integer, got {d!r}")
    d = int(d)
    table = {}
    for key, w in weights.items():
        w = float(w)
        if w == 0.0:
            continue
        table[_as_vector(key, d)] = w
    _validate_support(d, table)
    zs = sorted(table)
    vectors = np.array(zs, dtype=np.int64).reshape(-1, d)
    w = np.array([table[z] for z in zs])
    return WalkKernel(d=d, vectors=vectors, weights=w, diag=-math.fsum(w))


def nearest_neighbour_kernel(d: int, rate: float = 1.0) -> WalkKernel:
    """Simple symmetric walk with total jump rate ``rate``."""
    weights = {}
    for i in range(d):
        e = [0] * d
        e[i] = 1
        weights[tuple(e)] = rate / (2 * d)
        e[i] = -1
        weights[tuple(e)] = rate / (2 * d)
    return build_finite_variance_kernel(d, weights)


def _ball_points(d: int, R: int) -> np.ndarray:
    axes = [np.arange(-R, R + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    r2 = np.sum(grid * grid, axis=1)
    return grid[(r2 > 0) & (r2 <= R * R)]


def build_heavy_tail_kernel(
    d: int,
    alpha: float,
    H=1.0,
    R: int | None = None,
    c: float = 1.0,
    tail: str = "truncate",
) -> WalkKernel:
    """Kernel with rates c H(z/|z|) / |z|^(d+alpha) for 0 < |z| <= R.

    Parameters
    ----------
    H : float, callable, mapping or (directions, values)
        Direction function on the unit sphere. Tables use nearest-sample
        lookup; in d = 1 only u = +1 and u = -1 occur.
    R : int, optional
        Truncation radius, ``default_radius(d)`` if omitted.
    tail : {"truncate", "complete"}
        ``"complete"`` keeps the rates beyond R (d = 1 only); they enter
        a(0), the symbol and the jump sampler in closed form.
    """
    if int(d) != d or d < 1:
        raise KernelError(f"dimension must be a positive integer, got {d!r}")
    d = int(d)
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise KernelError(f"tail exponent alpha={alpha} outside the open interval (0, 2)")
    if c <= 0:
        raise KernelError("scale c must be positive")
    if tail not in ("truncate", "complete"):
        raise KernelError(f"unknown tail mode {tail!r}")
    if tail == "complete" and d != 1:
        raise KernelError("tail completion is only available in d = 1")
    R = default_radius(d) if R is None else int(R)
    if R < 1:
        raise KernelError("truncation radius must be at least 1")
    Hf = _as_direction_function(H, d)

    pts = _ball_points(d, R)
    norms = np.linalg.norm(pts, axis=1)
    units = pts / norms[:, None]
    hv = _eval_direction(Hf, units)
    if np.any(~np.isfinite(hv)) or np.any(hv <= 0):
        raise KernelError("direction function H must be strictly positive")
    h_neg = _eval_direction(Hf, -units)
    if np.any(np.abs(hv - h_neg) > SYMMETRY_RTOL * np.abs(hv)):
        raise KernelError("direction function H is not symmetric: H(u) != H(-u)")
    w = c * hv / norms ** (d + alpha)
    if not _lattice_generates(pts, d):
        raise KernelError(f"irreducibility violated: R={R} is too small to generate Z^{d}")

    tail_mass = 0.0
    if tail == "complete":
        tail_mass = 2.0 * c * float(hv[0]) * float(zeta(1.0 + alpha, R + 1))
    order = np.lexsort(pts.T[::-1])
    pts, w = pts[order], w[order]
    return WalkKernel(
        d=d,
        vectors=pts.astype(np.int64),
        weights=w,
        diag=-(math.fsum(w) + tail_mass),
        kind="heavy-tail",
        tail_alpha=alpha,
        tail_H=Hf,
        trunc_radius=R,
        scale=float(c),
        tail_mode=tail,
        tail_mass=tail_mass,
    )


# ---------------------------------------------------------------------------
# Fourier symbol


def _cos_sum_minus_zeta(theta: np.ndarray, s: float) -> np.ndarray:
    """sum_{z>=1} z^-s (cos(z theta) - 1) for |theta| <= pi, s in (1, 3).

    Uses the expansion of Re Li_s(exp(i theta)) around theta = 0, which
    converges on |theta| < 2 pi; s = 2 has the closed Bernoulli form.
    """
    th = np.abs(np.asarray(theta, dtype=float))
    if abs(s - 2.0) < 1e-9:
        return -0.5 * math.pi * th + 0.25 * th * th
    lead = gamma_fn(1.0 - s) * math.cos(0.5 * math.pi * (s - 1.0))
    out = lead * th ** (s - 1.0)
    term = np.ones_like(th)
    t2 = th * th
    for j in range(1, 80):
        term = term * (-t2) / ((2 * j - 1) * (2 * j))
        zj = zeta(s - 2 * j)
        out = out + zj * term
        if j > 8 and np.all(np.abs(zj * term) < 1e-18 * (1.0 + np.abs(out))):
            break
    return out


def completed_tail_eta(k: WalkKernel) -> float:
    """Exact eta for a completed d=1 kernel: -phi ~ eta |theta|^alpha."""
    s = 1.0 + k.tail_alpha
    if abs(s - 2.0) < 1e-9:
        return math.pi * k.tail_constant
    return -2.0 * k.tail_constant * gamma_fn(1.0 - s) * math.cos(0.5 * math.pi * (s - 1.0))


def symbol_values(k: WalkKernel, theta: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    """phi at an array of points, shape (..., d); no domain checks.

    Evaluated as -2 sum_{half support} 2 a(z) sin^2(<theta,z>/2) which keeps
    full relative accuracy as theta -> 0.
    """
    theta = np.asarray(theta, dtype=float)
    pts = theta.reshape(-1, k.d)
    out = np.empty(pts.shape[0])
    zh, wh = k.half_support()
    if k.is_completed:
        # full symbol from the closed form; the table is part of the sum
        out[:] = 2.0 * k.tail_constant * _cos_sum_minus_zeta(pts[:, 0], 1.0 + k.tail_alpha)
        return out.reshape(theta.shape[:-1])
    zf = zh.astype(float)
    step = max(1, chunk // max(1, len(wh)))
    for i in range(0, pts.shape[0], step):
        arg = pts[i:i + step] @ zf.T
        s = np.sin(0.5 * arg)
        out[i:i + step] = -4.0 * (s * s) @ wh
    return out.reshape(theta.shape[:-1])


def symbol_grid(k: WalkKernel, n: int) -> np.ndarray:
    """phi on the periodic grid theta_j = 2 pi j / n, shape (n,)*d.

    Finite-support kernels go through an FFT of the rates folded onto the
    discrete torus, which is exact at the grid points.
    """
    if k.is_completed:
        th = 2.0 * np.pi * np.arange(n) / n
        th = np.where(th > np.pi, th - 2.0 * np.pi, th)
        return symbol_values(k, th[:, None])
    a = np.zeros((n,) * k.d)
    idx = tuple((k.vectors % n).T)
    np.add.at(a, idx, k.weights)
    a[(0,) * k.d] += k.diag
    phi = np.fft.fftn(a).real
    phi[(0,) * k.d] = 0.0
    return np.minimum(phi, 0.0)


def fourier_symbol(k: WalkKernel, theta) -> float | np.ndarray:
    """phi(theta) = a(0) + sum_{z != 0} a(z) cos<theta, z> on [-pi, pi]^d."""
    th = np.asarray(theta, dtype=float)
    if k.d == 1 and th.ndim == 0:
        th = th.reshape(1)
    if th.shape[-1] != k.d:
        raise ValueError(f"theta must have trailing dimension {k.d}")
    if np.any(np.abs(th) > np.pi * (1 + 1e-12)):
        raise ValueError("theta outside the fundamental cube [-pi, pi]^d")
    out = symbol_values(k, th)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_bound_gamma(k: WalkKernel, n: int | None = None) -> float:
    """Largest gamma with phi(theta) <= -(gamma/d)|theta|^2 on a grid.

    Grid minimum of -phi(theta) d / |theta|^2 over [-pi, pi]^d minus the
    origin.
    """
    if n is None:
        n = {1: 4096, 2: 256}.get(k.d, 48)
    axis = np.linspace(-np.pi, np.pi, n + 1)
    grid = np.stack(np.meshgrid(*([axis] * k.d), indexing="ij"), axis=-1).reshape(-1, k.d)
    r2 = np.sum(grid * grid, axis=1)
    grid, r2 = grid[r2 > 0], r2[r2 > 0]
    ratio = -symbol_values(k, grid) * k.d / r2
    return float(ratio.min())


# ---------------------------------------------------------------------------
# tail fit


@dataclass(frozen=True)
class SymbolFit:
    """Fitted small-|theta| behaviour -phi(r u) ~ eta(u) r^alpha."""

    alpha_hat: float
    directions: np.ndarray
    eta: np.ndarray
    eta_min: float
    eta_max: float
    fit_window: tuple
    alpha_used: float
    residual: float = 0.0

    def eta_at(self, u) -> np.ndarray:
        """Nearest-sample lookup of eta at unit vectors ``u`` (..., d)."""
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, self.directions.shape[1])
        idx = np.argmax(flat @ self.directions.T, axis=1)
        return self.eta[idx].reshape(u.shape[:-1])


def default_directions(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * np.pi * np.arange(16) / 16
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    pts = np.stack(np.meshgrid(*([np.array([-1, 0, 1])] * d), indexing="ij"), -1).reshape(-1, d)
    pts = pts[np.any(pts != 0, axis=1)].astype(float)
    return pts / np.linalg.norm(pts, axis=1)[:, None]


def fit_symbol_tail(
    k: WalkKernel,
    directions=None,
    window=(1e-3, 1e-1),
    alpha: float | None = None,
    n_points: int = 40,
    max_residual: float = 0.15,
) -> SymbolFit:
    """Fit -phi(r u) = eta(u) r^alpha over r in ``window`` for each direction.

    ``alpha_hat`` comes from a free log-log regression pooled over the
    directions.  eta(u) is the regression intercept with the slope held at
    ``alpha`` (default: the kernel's tail exponent, or ``alpha_hat`` when the
    kernel has none).  If the local log-log slope anywhere in the window
    strays from ``alpha_hat`` by more than ``max_residual`` the window is not
    in the asymptotic regime and the fit is rejected.
    """
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 < lo < hi < np.pi:
        raise ValueError("fit window must satisfy 0 < lo < hi < pi")
    if hi / lo < 1.5:
        raise ValueError("fit window too narrow")
    dirs = default_directions(k.d) if directions is None else np.atleast_2d(np.asarray(directions, float))
    dirs = dirs / np.linalg.norm(dirs, axis=1)[:, None]
    r = np.geomspace(lo, hi, n_points)
    pts = r[None, :, None] * dirs[:, None, :]
    minus_phi = -symbol_values(k, pts)
    if np.any(minus_phi <= 0):
        raise ValueError("symbol vanishes inside the fit window")
    logr = np.log(r)
    logy = np.log(minus_phi)
    # pooled free fit: common slope, per-direction intercepts
    lr_c = logr - logr.mean()
    ly_c = logy - logy.mean(axis=1, keepdims=True)
    alpha_hat = float(np.sum(lr_c[None, :] * ly_c) / (len(dirs) * np.sum(lr_c ** 2)))
    local = np.gradient(logy, logr, axis=1)
    residual = float(np.max(np.abs(local - alpha_hat)))
    if residual > max_residual:
        raise ValueError(
            f"window {window} is not asymptotic: local log-log slope deviates "
            f"by {residual:.3g} > {max_residual}"
        )
    if alpha is None:
        alpha = k.tail_alpha if k.tail_alpha is not None else alpha_hat
    eta = np.exp(np.mean(logy - alpha * logr[None, :], axis=1))
    return SymbolFit(
        alpha_hat=alpha_hat,
        directions=dirs,
        eta=eta,
        eta_min=float(eta.min()),
        eta_max=float(eta.max()),
        fit_window=(lo, hi),
        alpha_used=float(alpha),
        residual=residual,
    )


# ---------------------------------------------------------------------------
# validation report and output


def kernel_checks(k: WalkKernel) -> list[tuple[str, bool, str]]:
    """Run every kernel invariant; returns (name, passed, detail) rows."""
    rows = []
    table = k.rates
    asym = [z for z, w in table.items()
            if abs(w - table.get(tuple(-c for c in z), -1.0)) > SYMMETRY_RTOL * abs(w)]
    rows.append(("symmetry", not asym, f"{len(asym)} asymmetric entries"))
    total = math.fsum(k.weights) + k.tail_mass
    resid = abs(k.diag + total)
    rows.append(("regularity", resid <= np.spacing(abs(k.diag)), f"|a(0)+sum| = {resid:.3g}"))
    nonneg = bool(np.all(k.weights >= 0) and k.diag < 0)
    rows.append(("nonnegativity", nonneg, f"a(0) = {k.diag:.6g}"))
    gen = _lattice_generates(k.vectors, k.d)
    rows.append(("irreducibility", gen, "support generates Z^d" if gen else "proper sublattice"))
    if k.tail_alpha is not None:
        norms = np.linalg.norm(k.vectors, axis=1)
        units = k.vectors / norms[:, None]
        scaled = k.weights * norms ** (k.d + k.tail_alpha) / _eval_direction(k.tail_H, units)
        outer = norms >= 0.75 * k.trunc_radius
        spread = float(np.ptp(scaled[outer]) / np.mean(scaled[outer])) if outer.any() else 0.0
        rows.append(("tail-profile", spread < 1e-9, f"relative spread {spread:.3g} near R"))
    return rows


def dump_kernel_csv(k: WalkKernel, path) -> None:
    """One row per support vector with its rate; the origin row holds a(0)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z{i + 1}" for i in range(k.d)] + ["rate"])
        w.writerow([0] * k.d + [repr(k.diag)])
        for z, a in zip(k.vectors, k.weights):
            w.writerow([int(c) for c in z] + [repr(float(a))])


def warn_if_truncated(k: WalkKernel) -> None:
    if k.kind == "heavy-tail" and not k.is_completed:
        warnings.warn(
            "truncated heavy-tail kernel has finite jump variance; its behaviour "
            "below |theta| ~ 1/R is Gaussian",
            RuntimeWarning,
            stacklevel=3,
        )
