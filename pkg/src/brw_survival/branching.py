"""Branching law at the source and the extinction-limit root equations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

SUPERCRITICAL = "supercritical"
CRITICAL = "critical"
SUBCRITICAL = "subcritical"

#: marker for z = infinity, where exp(-z) is taken to be exactly 0
Z_INF = math.inf


class LawError(ValueError):
    """A branching law violates one of its invariants."""


@dataclass(frozen=True)
class BranchingLaw:
    """Rates b_0, ..., b_K of the infinitesimal generating function f(u) = sum b_n u^n.

    b_1 < 0 is minus the total branching rate; the others are non-negative
    and the row sums to zero.
    """

    b: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        object.__setattr__(self, "b", b)
        if len(b) < 2:
            raise LawError("law needs at least b_0 and b_1")
        if not all(math.isfinite(v) for v in b):
            raise LawError("rates must be finite")
        if not b[1] < 0:
            raise LawError("b_1 must be negative")
        neg = [n for n, v in enumerate(b) if n != 1 and v < 0]
        if neg:
            raise LawError(f"b_n must be non-negative for n != 1 (violated at n={neg})")
        scale = max(abs(v) for v in b)
        if abs(math.fsum(b)) > 4 * np.spacing(scale) * len(b):
            raise LawError(f"rates must sum to zero (sum = {math.fsum(b):.3g})")

    @classmethod
    def from_pairs(cls, pairs) -> "BranchingLaw":
        """Build from (n, b_n) pairs; b_1 is filled in when omitted."""
        table = {int(n): float(v) for n, v in pairs}
        K = max(max(table), 1)
        b = [table.get(n, 0.0) for n in range(K + 1)]
        if 1 not in table:
            b[1] = -math.fsum(v for n, v in table.items() if n != 1)
        return cls(tuple(b))

    @property
    def K(self) -> int:
        return len(self.b) - 1

    @property
    def beta(self) -> float:
        return float(f_derivative(self, 1, 1.0))

    @property
    def branching_rate(self) -> float:
        return -self.b[1]

    def offspring_probabilities(self) -> np.ndarray:
        """P(n offspring) = b_n / (-b_1) for n != 1 (entry 1 is zero)."""
        p = np.array(self.b) / self.branching_rate
        p[1] = 0.0
        return p


def f_eval(law: BranchingLaw, u):
    """f(u) = sum_n b_n u^n."""
    return P.polyval(u, law.b)


def f_derivative(law: BranchingLaw, r: int, u):
    """r-th derivative of f at u (r >= 1)."""
    if r < 1:
        raise ValueError("derivative order must be >= 1")
    c = P.polyder(np.asarray(law.b), r)
    return P.polyval(u, c) if c.size else 0.0 * np.asarray(u, dtype=float)


def f_from_beta(law: BranchingLaw, u):
    """f written as -beta (1-u) + sum_{n>=2} b_n g_n(u), g_n = u^n - n u + n - 1."""
    u = np.asarray(u, dtype=float)
    out = -law.beta * (1.0 - u)
    for n in range(2, law.K + 1):
        out = out + law.b[n] * (u ** n - n * u + n - 1)
    return out


def classify_criticality(law_or_beta, beta_c: float, rtol: float = 1e-12) -> str:
    """Three-way comparison of beta with beta_c (relative tie tolerance)."""
    beta = law_or_beta.beta if isinstance(law_or_beta, BranchingLaw) else float(law_or_beta)
    if beta_c < 0:
        raise ValueError("beta_c must be non-negative")
    tol = rtol * max(abs(beta), abs(beta_c))
    if abs(beta - beta_c) <= tol:
        return CRITICAL
    return SUPERCRITICAL if beta > beta_c else SUBCRITICAL


def _first_sign_change(fun, lo: float, hi: float, n: int = 10_000, tol: float = 1e-14):
    """Least root of ``fun`` on [lo, hi] via a grid scan followed by bisection.

    Returns ``lo`` if fun(lo) is already zero, None if no sign change exists.
    """
    grid = np.linspace(lo, hi, n + 1)
    vals = fun(grid)
    if vals[0] == 0.0:
        return lo
    s = np.sign(vals)
    idx = np.nonzero(s[1:] != s[:-1])[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    if vals[i + 1] == 0.0:
        return float(grid[i + 1])
    return float(brentq(lambda v: float(fun(np.array(v))), grid[i], grid[i + 1],
                        xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200))


def root_u_star(law: BranchingLaw) -> float:
    """Least root of f in [0, 1) for a supercritical-at-source law (beta > 0)."""
    if not law.beta > 0:
        raise ValueError("u_* exists only for beta > 0")
    if law.b[0] == 0.0:
        return 0.0
    # f > 0 at 0 and f < 0 just below 1; stop short of the root at u = 1
    hi = 1.0 - 1e-9
    while f_eval(law, hi) >= 0 and hi > 0.5:
        hi = 1.0 - 10 * (1.0 - hi)
    root = _first_sign_change(lambda u: f_eval(law, u), 0.0, hi)
    if root is None:
        raise ValueError("no sign change of f in [0, 1)")
    return root


@dataclass
class SignReport:
    """Outcome of the sign-structure check; ``violations`` is empty on success."""

    beta: float
    u_star: float | None
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_f_sign_structure(law: BranchingLaw, n: int = 2001) -> SignReport:
    """Check positivity / monotonicity of f on a dense grid of [0, 1].

    beta <= 0: f > 0 on [0,1), f' <= 0 and f^(r) >= 0 for r >= 2.
    beta > 0: a single u_* in [0,1) with f > 0 before it, f < 0 after it
    (up to 1), and a single sign change of f'.
    """
    u = np.linspace(0.0, 1.0, n)
    scale = max(abs(v) for v in law.b)
    tol = 64 * np.finfo(float).eps * scale * (law.K + 1)
    fv, d1 = f_eval(law, u), f_derivative(law, 1, u)
    bad = []
    beta = law.beta
    # a critical law can come out with beta a few ulps above zero
    if beta <= tol:
        if np.any(fv[:-1] <= 0):
            bad.append("f not strictly positive on [0,1)")
        if np.any(d1 > tol):
            bad.append("f' positive somewhere on [0,1]")
        for r in range(2, law.K + 1):
            if np.any(f_derivative(law, r, u) < -tol):
                bad.append(f"f^({r}) negative somewhere on [0,1]")
        return SignReport(beta, None, bad)
    us = root_u_star(law)
    inner = u[(u > us) & (u < 1.0)]
    # near u_* and u=1 the sign test is limited by round-off
    inner = inner[(inner - us > 1e-6) & (1.0 - inner > 1e-6)]
    if np.any(f_eval(law, inner) >= 0):
        bad.append("f not negative on (u_*, 1)")
    before = u[(u > 0) & (u < us - 1e-6)]
    if before.size and np.any(f_eval(law, before) <= 0):
        bad.append("f not positive on (0, u_*)")
    s = np.sign(np.where(np.abs(d1) <= tol, 0.0, d1))
    s = s[s != 0]
    if np.count_nonzero(s[1:] != s[:-1]) > 1:
        bad.append("f' changes sign more than once")
    return SignReport(beta, us, bad)


@dataclass
class ExtinctionRoot:
    """Limit c(z, x) of 1 - F(z, t, x) as t -> infinity."""

    z: float
    x: tuple
    c: float
    residual: float
    c0: float

    @property
    def z_is_infinite(self) -> bool:
        return math.isinf(self.z)


def extinction_root(law: BranchingLaw, G0_00: float, G0_x0: float | None = None,
                    z: float = Z_INF, x=(0,), tol: float = 1e-13) -> ExtinctionRoot:
    """Solve 1 - c - e^-z = G_0(x,0) f(1 - c(z,0)) on a transient lattice.

    c(z, 0) is the least non-negative root of the x = 0 equation; c(z, x)
    then follows explicitly.  ``z = Z_INF`` gives e^-z = 0 exactly.
    """
    if G0_x0 is None:
        G0_x0 = G0_00
    if not (math.isfinite(G0_00) and G0_00 > 0):
        raise ValueError("G_0(0,0) must be finite and positive (transient walk)")
    if not 0 < G0_x0 <= G0_00 * (1 + 1e-12):
        raise ValueError("need 0 < G_0(x,0) <= G_0(0,0)")
    if z < 0:
        raise ValueError("z must be non-negative")
    ez = 0.0 if math.isinf(z) else math.exp(-z)

    def eq(c):
        return 1.0 - c - ez - G0_00 * f_eval(law, 1.0 - c)

    c0 = _first_sign_change(eq, 0.0, 1.0, tol=tol)
    if c0 is None:
        # the only possible root at the right end point
        if abs(eq(np.array(1.0))) <= 1e-12:
            c0 = 1.0
        else:
            raise ValueError("no root of the extinction equation in [0, 1]")
    c0 = float(c0)
    resid0 = abs(float(eq(np.array(c0))))
    cx = 1.0 - ez - G0_x0 * float(f_eval(law, 1.0 - c0))
    if not -1e-12 <= cx <= 1 + 1e-12:
        raise ValueError(f"c(z,x) = {cx} outside [0, 1]")
    cx = min(max(cx, 0.0), 1.0)
    return ExtinctionRoot(float(z), tuple(int(v) for v in np.atleast_1d(x)), cx, resid0, c0)
