"""Named end-to-end verification scenarios.

Each scenario returns a list of ``Check`` rows; a scenario passes when all
of its rows pass.  The CLI ``verify`` command and the acceptance tests both
run these functions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn
from scipy.special import ive

from .branching import BranchingLaw, extinction_root
from .kernel import build_heavy_tail_kernel, fit_symbol_tail, nearest_neighbour_kernel
from .montecarlo import SimConfig, estimate_survival
from .transition import (
    green_function,
    solve_lambda0,
    transition_delta,
    transition_probability,
    verify_delta_asymptotics,
)
from .volterra import TimeGrid, fit_asymptote, solve_Q_total

CRITICAL_LAW = (0.5, -1.0, 0.5)
DEATH_LAW = (1.0, -1.0)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def watson_constant() -> float:
    """G_0(0,0) of the simple walk on Z^3 from its Gamma-function closed form."""
    g = gamma_fn(1 / 24) * gamma_fn(5 / 24) * gamma_fn(7 / 24) * gamma_fn(11 / 24)
    return math.sqrt(6.0) / (32.0 * math.pi ** 3) * g


def watson_time_integral() -> float:
    """Same constant as int_0^inf (e^{-t/3} I_0(t/3))^3 dt (independent route)."""
    f = lambda t: ive(0, t / 3.0) ** 3
    head, _ = quad(f, 0.0, 100.0, epsabs=1e-13, epsrel=1e-13, limit=400)
    tail, _ = quad(f, 100.0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400)
    return head + tail


def heavy_tail_kernel_d1(alpha: float = 1.5, R: int = 64):
    """The heavy-tailed d=1 kernel used by the scenarios (completed tail)."""
    return build_heavy_tail_kernel(1, alpha, H=1.0, R=R, c=1.0, tail="complete")


# ---------------------------------------------------------------------------


def green_watson() -> list:
    k = nearest_neighbour_kernel(3)
    t0 = time.perf_counter()
    g = green_function(k, 0.0)
    dt = time.perf_counter() - t0
    closed, integral = watson_constant(), watson_time_integral()
    return [
        Check("G0 d=3 vs 1.516386", abs(g.value - 1.516386) <= 1e-3,
              f"G0={g.value:.10f} (quad err {g.quad_error:.1e}), |diff|={abs(g.value - 1.516386):.2e}"),
        Check("G0 d=3 vs independent oracle", abs(g.value - integral) <= 1e-3,
              f"time-domain oracle {integral:.10f}, Gamma closed form {closed:.10f}"),
        Check("G0 d=3 runtime < 60 s", dt < 60.0, f"{dt:.2f} s"),
    ]


def transition_bessel() -> list:
    k = nearest_neighbour_kernel(1)
    rows = []
    for t in (0.5, 1.0, 5.0):
        p = transition_probability(k, t, 0, 0)
        ref = float(ive(0, t))
        rows.append(Check(f"p({t},0,0) vs e^-t I0(t)", abs(p - ref) <= 1e-6,
                          f"{p:.12f} vs {ref:.12f}, |diff|={abs(p - ref):.1e}"))
    dl = transition_delta(k, 1.0, 1)
    ref = float(ive(0, 1.0) - ive(1, 1.0))
    rows.append(Check("delta(1,1) vs e^-1(I0-I1)", abs(dl - ref) <= 1e-6,
                      f"{dl:.12f} vs {ref:.12f}, |diff|={abs(dl - ref):.1e}"))
    return rows


def lambda0_closed_form() -> list:
    k = nearest_neighbour_kernel(1)
    lam = solve_lambda0(k, 1.0)
    ref = math.sqrt(2.0) - 1.0
    return [Check("lambda0 d=1 beta=1 vs sqrt2-1", abs(lam - ref) <= 1e-8,
                  f"{lam:.14f}, |diff|={abs(lam - ref):.1e}")]


def _volterra_mc(k, label, n_replicas=10_000, seed=2024, threads=None) -> list:
    law = BranchingLaw(CRITICAL_LAW)
    times = (1.0, 5.0, 10.0, 25.0)
    curve = solve_Q_total(k, law, TimeGrid.uniform(25.0, 0.025))
    est = estimate_survival(SimConfig(k, law, (0,) * k.d, 25.0, times, seed=seed), n_replicas, threads)
    rows = []
    for i, t in enumerate(times):
        qv = float(curve.at(t))
        z = abs(qv - est.survival[i]) / est.survival_se[i]
        rows.append(Check(f"{label}: |Q_V - Q_MC| <= 3 SE at t={t:g}", z <= 3.0,
                          f"Q_V={qv:.5f}, Q_MC={est.survival[i]:.5f} +- {est.survival_se[i]:.5f} ({z:.2f} SE)"))
    return rows


def volterra_mc_simple(n_replicas=10_000, threads=None) -> list:
    return _volterra_mc(nearest_neighbour_kernel(1), "simple walk", n_replicas, threads=threads)


def volterra_mc_heavy(n_replicas=10_000, threads=None) -> list:
    return _volterra_mc(heavy_tail_kernel_d1(), "heavy tail a=1.5", n_replicas, threads=threads)


def _slope_rows(k, law, target, tol, label, windows):
    curve = solve_Q_total(k, law, TimeGrid.geometric(windows[-1][1]))
    slopes = [fit_asymptote(curve, "power", w).exponent for w in windows]
    main = slopes[-1]
    direct = abs(main - target) <= tol
    dist = [abs(s - target) for s in slopes]
    trend = all(b < a for a, b in zip(dist, dist[1:]))
    detail = (f"slope {main:.4f} on [{windows[-1][0]:g},{windows[-1][1]:g}], target {target:.4f} +- {tol}; "
              f"windows {', '.join(f'{s:.4f}' for s in slopes)}")
    return slopes, direct, trend, detail


def d1_exponents() -> list:
    k = nearest_neighbour_kernel(1)
    rows = []
    for law, target, label in ((CRITICAL_LAW, -0.25, "critical"), (DEATH_LAW, -0.5, "subcritical")):
        _, direct, _, detail = _slope_rows(k, BranchingLaw(law), target, 0.05, label, [(100.0, 1000.0)])
        rows.append(Check(f"simple walk {label} exponent", direct, detail))
    return rows


def heavy_tail_exponents() -> list:
    """Critical and subcritical slopes; a monotone approach also passes."""
    k = heavy_tail_kernel_d1()
    a = 1.5
    windows = [(25.0, 250.0), (50.0, 500.0), (100.0, 1000.0)]
    rows = []
    for law, target, label in ((CRITICAL_LAW, (1 - a) / (2 * a), "critical"),
                               (DEATH_LAW, (1 - a) / a, "subcritical")):
        _, direct, trend, detail = _slope_rows(k, BranchingLaw(law), target, 0.07, label, windows)
        how = "within tolerance" if direct else ("monotone approach" if trend else "no convergence")
        rows.append(Check(f"heavy tail a=1.5 {label} exponent", direct or trend, f"{detail} [{how}]"))
    return rows


def transient_plateau(n_replicas=10_000, T=500.0, threads=None) -> list:
    k = nearest_neighbour_kernel(3)
    law = BranchingLaw(DEATH_LAW)
    g0 = green_function(k, 0.0).value
    root = extinction_root(law, g0).c
    curve = solve_Q_total(k, law, TimeGrid.geometric(T))
    est = estimate_survival(SimConfig(k, law, (0, 0, 0), T, (T,), seed=7), n_replicas, threads)
    qv, qm = float(curve.values[-1]), float(est.survival[0])
    return [
        Check("root 1/(1+G0) vs 0.3974", abs(root - 1 / (1 + watson_constant())) <= 1e-6,
              f"c={root:.6f}"),
        Check(f"Volterra Q({T:g}) within 1e-2 of root", abs(qv - root) <= 1e-2,
              f"Q_V={qv:.5f}, |diff|={abs(qv - root):.4f}"),
        Check(f"MC Q({T:g}) within 1e-2 of root", abs(qm - root) <= 1e-2,
              f"Q_MC={qm:.5f} +- {est.survival_se[0]:.5f}, |diff|={abs(qm - root):.4f}"),
    ]


def delta_ratio() -> list:
    k = heavy_tail_kernel_d1()
    fit = fit_symbol_tail(k, window=(1e-3, 1e-1))
    da = verify_delta_asymptotics(k, fit, 1, [1e2, 1e3, 1e4])
    curve = ", ".join(f"{r:.4f}" for r in da.ratio_curve)
    return [Check("delta ratio at t=1e4 within 10% of 1", da.converged(0.1),
                  f"gamma_tilde={da.gamma_tilde:.6f}, ratios at t=1e2,1e3,1e4: {curve}")]


SCENARIOS = {
    "green-watson": green_watson,
    "transition-bessel": transition_bessel,
    "lambda0-closed-form": lambda0_closed_form,
    "volterra-mc-simple": volterra_mc_simple,
    "volterra-mc-heavy": volterra_mc_heavy,
    "d1-critical-exponent": d1_exponents,
    "heavy-tail-exponents": heavy_tail_exponents,
    "transient-plateau": transient_plateau,
    "theorem1-ratio": delta_ratio,
}


def run_scenario(name: str, **kwargs) -> list:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}")
    return SCENARIOS[name](**kwargs)
