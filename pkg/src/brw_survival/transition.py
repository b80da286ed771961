"""Transition probabilities, Green's functions and recurrence.

Everything is computed in the Fourier domain:

    p(t, x, y)  = (2 pi)^-d int cos<theta, y - x> exp(phi(theta) t) d theta
    G_lam(x, y) = (2 pi)^-d int cos<theta, y - x> / (lam - phi(theta)) d theta

Finite-range kernels use the periodic trapezoid rule, whose error is the
aliasing sum over displacements shifted by the grid period and so falls off
as fast as the walk's own tails.  Kernels with a completed power-law tail
have a cusp |theta|^alpha at the origin; there a graded Gauss-Legendre rule
on (0, pi] is used instead.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

from .kernel import SymbolFit, WalkKernel, symbol_values
from .spectral import (
    MAX_GRID,
    QuadratureError,
    displacement_weight,
    line_rule,
    refine,
    singular_average,
    spectral_measure,
    sphere_rule,
    start_grid,
    support_reach,
)

RECURRENT = "recurrent"
TRANSIENT = "transient"


def default_rtol(d: int) -> float:
    return 1e-6 if d <= 2 else 1e-4


def _lattice(x, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=np.int64) if x is None else np.atleast_1d(np.asarray(x))
    if v.shape != (d,):
        raise ValueError(f"lattice point must have {d} coordinates")
    if not np.all(np.equal(np.mod(v, 1), 0)):
        raise ValueError("lattice point must have integer coordinates")
    return v.astype(np.int64)


# ---------------------------------------------------------------------------
# quadrature rules for exp(phi t)


@dataclass
class SpectralRule:
    """Discrete measure (values, weights) standing in for the torus integral.

    ``sum(weights * h(values))`` approximates (2 pi)^-d int w(theta)
    h(phi(theta)) d theta for the displacement weight the rule was built for.
    """

    values: np.ndarray
    weights: np.ndarray
    resolution: int
    error: float = 0.0

    def evaluate(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.shape)
        step = max(1, (1 << 22) // max(1, self.values.size))
        for i in range(0, t.size, step):
            out[i:i + step] = np.exp(np.outer(t[i:i + step], self.values)) @ self.weights
        return out


def _line_rule_for(k: WalkKernel, x, kind: str, n_gl: int) -> SpectralRule:
    xmax = float(np.max(np.abs(x))) if x.size else 0.0
    theta, w = line_rule(n_gl=n_gl, max_width=min(np.pi / 4, 4.0 / (xmax + 1.0)))
    c = np.cos(theta * x[0]) if xmax else np.ones_like(theta)
    if kind == "one_minus_cos":
        c = 1.0 - c
    return SpectralRule(symbol_values(k, theta[:, None]), w * c, n_gl)


def spectral_rule(k: WalkKernel, x=None, kind: str = "cos", t_probe=(1.0,),
                  rtol: float | None = None, atol: float = 1e-13) -> SpectralRule:
    """Build a rule accurate for exp(phi t) at the probe times.

    Raises QuadratureError when the estimated error stays above
    ``atol + rtol |value|`` at the largest admissible resolution.
    """
    x = _lattice(x, k.d)
    rtol = default_rtol(k.d) if rtol is None else rtol
    t_probe = np.atleast_1d(np.asarray(t_probe, dtype=float))
    if k.is_completed:
        coarse = _line_rule_for(k, x, kind, 16)
        fine = _line_rule_for(k, x, kind, 24)
        vf, vc = fine.evaluate(t_probe), coarse.evaluate(t_probe)
        err = np.abs(vf - vc)
        fine.error = float(err.max())
        if np.any(err > atol + rtol * np.abs(vf)):
            raise QuadratureError("graded rule did not converge", vf, err)
        return fine

    cache = {}

    def measure(n):
        if n not in cache:
            w = displacement_weight(k, n, x, kind)
            cache[n] = spectral_measure(k, n, w)
        return cache[n]

    def evaluate(n):
        v, w = measure(n)
        return SpectralRule(v, w, n).evaluate(t_probe)

    n0 = start_grid(k)
    n0 = max(n0, 1 << int(math.ceil(math.log2(4 * float(np.max(np.abs(x))) + 1))))
    nmax = MAX_GRID.get(k.d, 64)
    n0 = min(n0, nmax // 2)
    _, err, n = refine(evaluate, n0, nmax, rtol, atol)
    v, w = measure(n)
    return SpectralRule(v, w, n, float(np.max(err)))


# ---------------------------------------------------------------------------
# transition probabilities


def _propagate(k, t, diff, kind, rtol, atol, return_error):
    rule = spectral_rule(k, diff, kind, (t,), rtol, atol)
    val = float(rule.evaluate(t)[0])
    # round-off can push tiny probabilities a few ulps outside [0, 1]
    val = min(max(val, 0.0), 1.0)
    return (val, rule.error) if return_error else val


def transition_probability(k: WalkKernel, t: float, x=None, y=None, *,
                           rtol: float | None = None, atol: float = 1e-13,
                           return_error: bool = False):
    """p(t, x, y) for the walk with kernel ``k``.

    Only the displacement y - x enters the evaluation.  With
    ``return_error`` the quadrature error estimate is returned too.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    diff = _lattice(y, k.d) - _lattice(x, k.d)
    if t == 0:
        val = 1.0 if not diff.any() else 0.0
        return (val, 0.0) if return_error else val
    return _propagate(k, t, diff, "cos", rtol, atol, return_error)


def transition_delta(k: WalkKernel, t: float, x, *, rtol: float | None = None,
                     atol: float = 1e-15, return_error: bool = False):
    """p(t,0,0) - p(t,x,0) from the single integral with weight 1 - cos<theta,x>.

    The difference is never formed from two near-equal probabilities, so
    relative accuracy survives at large t.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = _lattice(x, k.d)
    if not x.any():
        return (0.0, 0.0) if return_error else 0.0
    rule = spectral_rule(k, x, "one_minus_cos", (t,), rtol, atol)
    val = max(float(rule.evaluate(t)[0]), 0.0)
    return (val, rule.error) if return_error else val


# ---------------------------------------------------------------------------
# propagator table for the Volterra solvers


_H1_SERIES = np.array([1.0 / (math.factorial(n) * (n + 2)) for n in range(18)])[::-1]


def _h1(y: np.ndarray) -> np.ndarray:
    """int_0^1 s exp(y s) ds, stable near y = 0."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = np.abs(y) < 0.5
    ys = y[small]
    acc = np.full_like(ys, _H1_SERIES[0])
    for c in _H1_SERIES[1:]:
        acc = acc * ys + c
    out[small] = acc
    yl = y[~small]
    out[~small] = (np.exp(yl) * (yl - 1.0) + 1.0) / (yl * yl)
    return out


def _e1(y: np.ndarray) -> np.ndarray:
    """expm1(y) / y with the removable singularity filled in."""
    y = np.asarray(y, dtype=float)
    out = np.ones_like(y)
    nz = y != 0
    out[nz] = np.expm1(y[nz]) / y[nz]
    return out


class PropagatorTable:
    """p(u, x, 0) and its panel moments for 0 <= u <= t_max.

    The spectral rule is chosen once, accurate at the largest time, and then
    reused for every evaluation.  Panels close to u = 0 (or wide compared
    with their offset) are summed mode by mode; panels further out, where p
    is smooth on the scale of the panel, use Gauss-Legendre on a cubic
    Hermite table of p with exact derivatives.  The table is read-only after
    construction and can be shared between solves.
    """

    GL_ORDER = 8
    NODE_RATIO = 1.01

    def __init__(self, k: WalkKernel, x=None, t_max: float = 1.0, *,
                 rtol: float | None = None, atol: float = 1e-10):
        self.kernel = k
        self.x = _lattice(x, k.d)
        self.t_max = float(t_max)
        probes = np.unique(np.clip([0.1, 1.0, 0.1 * t_max, t_max], 1e-3, max(t_max, 1e-3)))
        self.rule = spectral_rule(k, self.x, "cos", probes, rtol, atol)
        # below u_smooth p varies on the scale of the jump rate
        self.u_smooth = max(1.0, 2.0 / k.jump_rate)
        self._spline = None

    def _check(self, u):
        if np.any(u < 0) or np.any(u > self.t_max * (1 + 1e-9)):
            raise ValueError("argument outside the tabulated range")

    def p(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._check(u)
        return self.rule.evaluate(u.ravel()).reshape(u.shape)

    def _interpolant(self):
        if self._spline is None:
            lo, hi = self.u_smooth, max(self.t_max, self.u_smooth * 1.1)
            m = max(8, int(math.ceil(math.log(hi / lo) / math.log(self.NODE_RATIO))))
            u = lo * (hi / lo) ** (np.arange(m + 1) / m)
            v, w = self.rule.values, self.rule.weights
            e = np.exp(np.outer(u, v))
            self._spline = CubicHermiteSpline(u, e @ w, e @ (w * v))
        return self._spline

    def _exact_moments(self, A, h):
        v, w = self.rule.values, self.rule.weights
        I0 = np.empty(A.size)
        J1 = np.empty(A.size)
        step = max(1, (1 << 21) // max(1, v.size))
        for i in range(0, A.size, step):
            a, hh = A[i:i + step], h[i:i + step]
            e = np.exp(np.outer(a, v))
            y = np.outer(hh, v)
            I0[i:i + step] = hh * ((e * _e1(y)) @ w)
            J1[i:i + step] = hh * hh * ((e * _h1(y)) @ w)
        return I0, J1

    def panel_moments(self, A, h) -> tuple:
        """int_A^{A+h} p(v) dv and int_A^{A+h} (v - A) p(v) dv."""
        A = np.atleast_1d(np.asarray(A, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), A.shape).copy()
        self._check(A + h)
        far = (A >= self.u_smooth) & (A >= 2.0 * h)
        I0 = np.empty(A.size)
        J1 = np.empty(A.size)
        if np.any(~far):
            I0[~far], J1[~far] = self._exact_moments(A[~far], h[~far])
        if np.any(far):
            xg, wg = leggauss(self.GL_ORDER)
            s = 0.5 * (xg + 1.0)
            a, hh = A[far], h[far]
            pv = self._interpolant()(a[:, None] + hh[:, None] * s[None, :])
            I0[far] = 0.5 * hh * (pv @ wg)
            J1[far] = 0.5 * hh * hh * (pv @ (wg * s))
        return I0, J1


# ---------------------------------------------------------------------------
# Green's function and recurrence


@dataclass
class GreenEvaluation:
    """G_lam(x, y) with a quadrature error estimate.

    ``value`` is ``inf`` (the divergence marker) for lam = 0 on a walk whose
    Green's function diverges.
    """

    lam: float
    x: tuple
    y: tuple
    value: float
    quad_error: float
    classification: str

    @property
    def divergent(self) -> bool:
        return math.isinf(self.value)


def rule_classification(k: WalkKernel) -> str:
    """Recurrence from the textbook criteria on (d, kind, alpha)."""
    if k.kind == "heavy-tail":
        return RECURRENT if (k.d == 1 and k.tail_alpha >= 1.0) else TRANSIENT
    return RECURRENT if k.d <= 2 else TRANSIENT


def effective_classification(k: WalkKernel) -> str:
    """Recurrence of the kernel as actually represented.

    A truncated heavy-tail kernel has finite jump variance, so it is
    recurrent in d <= 2 whatever alpha says; a completed d=1 kernel keeps
    its |theta|^alpha cusp and follows the alpha rule.
    """
    return RECURRENT if k.d <= k.small_theta_exponent else TRANSIENT


def _green_levels(k: WalkKernel, d: int, diff=None):
    # the factor cos<theta, x> oscillates like a jump of length |x|
    span = float(np.max(np.abs(diff))) if diff is not None and np.size(diff) else 0.0
    reach = max(support_reach(k), span)
    base_rest = {1: 256, 2: 64}.get(d, 32)
    base_rest = max(base_rest, 1 << int(math.ceil(math.log2(4 * reach + 1))))
    base_ang = {1: 2, 2: 32}.get(d, 32)
    base_ang = max(base_ang, int(math.ceil(3 * reach)) if d > 1 else 2)
    width = 4.0 / reach if reach > 1 else np.inf
    coarse = dict(n_rest=base_rest, n_ang=base_ang, n_gl=16, max_width=2 * width)
    fine = dict(n_rest=2 * base_rest, n_ang=(3 * base_ang) // 2 if d > 1 else 2,
                n_gl=24, max_width=width)
    return coarse, fine


def green_function(k: WalkKernel, lam: float, x=None, y=None, *,
                   rtol: float | None = None, atol: float = 1e-12,
                   check: bool = True) -> GreenEvaluation:
    """G_lam(x, y) by partition-of-unity quadrature around theta = 0.

    The value comes from the finer of two resolutions and their difference
    is the error estimate.  With ``check`` a QuadratureError is raised when
    that estimate exceeds the tolerance.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    xv, yv = _lattice(x, k.d), _lattice(y, k.d)
    diff = yv - xv
    cls = effective_classification(k)
    tx, ty = tuple(int(c) for c in xv), tuple(int(c) for c in yv)
    if lam == 0 and cls == RECURRENT:
        return GreenEvaluation(0.0, tx, ty, math.inf, 0.0, cls)
    coarse, fine = _green_levels(k, k.d, diff)
    vf = singular_average(k, lam, diff, **fine)
    vc = singular_average(k, lam, diff, **coarse)
    err = abs(vf - vc)
    rtol = default_rtol(k.d) if rtol is None else rtol
    # G_lam(x) <= G_lam(0) comes from cancellation in the cos factor, so the
    # error is judged on the scale of G_lam(0) rather than the value itself
    scale = abs(vf)
    if check and diff.any() and err > atol + rtol * scale:
        scale = max(scale, green_value(k, lam))
    if check and err > atol + rtol * scale:
        raise QuadratureError(f"G_lambda estimate error {err:.3g} above tolerance", vf, err)
    return GreenEvaluation(float(lam), tx, ty, float(vf), float(err), cls)


def green_value(k: WalkKernel, lam: float, x=None) -> float:
    """Fine-level G_lam(x, 0) without the two-level check (for root finding)."""
    diff = _lattice(x, k.d)
    _, fine = _green_levels(k, k.d, diff)
    return singular_average(k, lam, diff, **fine)


@dataclass
class RecurrenceProbe:
    lambdas: np.ndarray
    values: np.ndarray
    increment_ratio: float
    divergent: bool


def probe_divergence(k: WalkKernel, exponents=(2, 3, 4, 5, 6), threshold: float = 0.9) -> RecurrenceProbe:
    """Evaluate G_lam(0,0) at lam = 10^-k and test whether it levels off.

    Successive increments shrink geometrically when G_0 is finite and stay
    level (or grow) when it diverges; the last increment ratio is compared
    with ``threshold``.
    """
    lams = 10.0 ** -np.asarray(exponents, dtype=float)
    vals = np.array([green_value(k, lam) for lam in lams])
    inc = np.diff(vals)
    ratio = float(inc[-1] / inc[-2]) if inc[-2] > 0 else math.inf
    return RecurrenceProbe(lams, vals, ratio, bool(ratio >= threshold))


def classify_recurrence(k: WalkKernel, probe: bool = True) -> str:
    """Recurrent or transient; the rule-based answer is authoritative.

    With ``probe`` the growth of G_lam as lam decreases is checked as well
    and a disagreement is reported as a warning.
    """
    cls = rule_classification(k)
    if probe:
        pr = probe_divergence(k)
        numeric = RECURRENT if pr.divergent else TRANSIENT
        if numeric != cls:
            warnings.warn(
                f"numerical probe suggests {numeric} (increment ratio "
                f"{pr.increment_ratio:.3f}) but the criteria give {cls}; "
                "a truncated tail makes the jump variance finite",
                RuntimeWarning, stacklevel=2,
            )
    return cls


def critical_intensity(k: WalkKernel) -> float:
    """beta_c = 1 / G_0(0,0), zero when G_0 diverges."""
    if effective_classification(k) == RECURRENT:
        if rule_classification(k) == TRANSIENT:
            warnings.warn(
                "kernel is transient by its tail exponent but the truncated "
                "tail makes G_0 diverge; returning beta_c = 0 "
                "(use tail='complete' to keep the heavy tail)",
                RuntimeWarning, stacklevel=2,
            )
        return 0.0
    return 1.0 / green_function(k, 0.0).value


def solve_lambda0(k: WalkKernel, beta: float, *, xtol: float = 1e-14) -> float:
    """The positive root of G_lam(0,0) = 1/beta (supercritical beta only).

    lam -> G_lam is strictly decreasing with G_beta <= 1/beta, so the root
    lies in (0, beta] and is bracketed before the bracketing solve.
    """
    beta_c = critical_intensity(k)
    if not beta > beta_c * (1 + 1e-12):
        raise ValueError(f"beta = {beta} is not supercritical (beta_c = {beta_c})")
    target = 1.0 / beta

    def h(lam):
        return green_value(k, lam) - target

    hi = beta
    lo = 0.5 * beta
    while h(lo) <= 0:
        lo *= 0.1
        if lo < 1e-300:
            raise ValueError("could not bracket lambda_0")
    root = brentq(h, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    resid = abs(h(root))
    if resid >= 1e-8 * target:
        raise QuadratureError(f"lambda_0 residual {resid:.3g} too large", root, resid)
    return float(root)


@dataclass
class GreenDivergenceFit:
    """G_lam(0,0) ~ gamma * lam^-exponent as lam -> 0."""

    exponent: float
    gamma: float
    gamma_spread: float
    lambdas: np.ndarray
    values: np.ndarray


def fit_green_divergence(k: WalkKernel, lambdas=None, exponent: float | None = None) -> GreenDivergenceFit:
    """Estimate the divergence constant of G_lam on recurrent d=1 kernels.

    ``exponent`` defaults to (alpha-1)/alpha for completed heavy tails and
    1/2 otherwise.  ``gamma_spread`` is the relative spread of G lam^p across
    the two smallest lambdas, a proxy for the remaining pre-asymptotic bias.
    """
    if exponent is None:
        a = k.small_theta_exponent
        exponent = (a - 1.0) / a
    lams = np.geomspace(1e-6, 1e-3, 7) if lambdas is None else np.asarray(lambdas, float)
    vals = np.array([green_value(k, lam) for lam in lams])
    scaled = vals * lams ** exponent
    order = np.argsort(lams)
    g = float(scaled[order[0]])
    spread = float(abs(scaled[order[1]] - g) / g)
    return GreenDivergenceFit(float(exponent), g, spread, lams, vals)


# ---------------------------------------------------------------------------
# small-theta asymptotics of p(t,0,0) - p(t,x,0)


def gamma_tilde(k: WalkKernel, fit: SymbolFit, x, n_ang: int | None = None) -> float:
    """(2 (2 pi)^d)^-1 int_{R^d} <w, x>^2 exp(-eta(w/|w|) |w|^alpha) dw.

    The radial integral is done in closed form, the angular one with the
    sphere rule and the fitted eta.
    """
    if not fit.eta_min > 0:
        raise ValueError("fitted eta must be strictly positive")
    x = _lattice(x, k.d).astype(float)
    if not x.any():
        return 0.0
    d, alpha = k.d, fit.alpha_used
    if n_ang is None:
        n_ang = {1: 2, 2: 512}.get(d, 96)
    u, wu = sphere_rule(d, n_ang)
    ang = np.sum(wu * (u @ x) ** 2 * fit.eta_at(u) ** (-(d + 2) / alpha))
    return float(ang * gamma_fn((d + 2) / alpha) / alpha / (2.0 * (2.0 * np.pi) ** d))


@dataclass
class DeltaAsymptotics:
    """Ratio (p(t,0,0) - p(t,x,0)) t^((d+2)/alpha) / gamma_tilde over a t grid."""

    x: tuple
    gamma_tilde: float
    t: np.ndarray
    ratio_curve: np.ndarray
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final_ratio(self) -> float:
        return float(self.ratio_curve[-1])

    def converged(self, tol: float = 0.1) -> bool:
        return abs(self.final_ratio - 1.0) <= tol


def verify_delta_asymptotics(k: WalkKernel, fit: SymbolFit, x, t_grid) -> DeltaAsymptotics:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ValueError("t grid must be positive and strictly increasing")
    g = gamma_tilde(k, fit, x)
    if g == 0.0:
        raise ValueError("gamma_tilde vanishes at x = 0; the ratio is undefined")
    power = (k.d + 2) / fit.alpha_used
    vals, errs = zip(*(transition_delta(k, ti, x, return_error=True) for ti in t))
    ratio = np.asarray(vals) * t ** power / g
    return DeltaAsymptotics(tuple(int(c) for c in _lattice(x, k.d)), g, t, ratio,
                            np.asarray(errs) * t ** power / g)
