"""Survival analysis for continuous-time branching random walks on Z^d
with a single branching source at the origin."""
from .branching import (
    BranchingLaw,
    ExtinctionRoot,
    check_f_sign_structure,
    classify_criticality,
    extinction_root,
    f_derivative,
    f_eval,
    root_u_star,
)
from .kernel import (
    SymbolFit,
    WalkKernel,
    build_finite_variance_kernel,
    build_heavy_tail_kernel,
    fit_symbol_tail,
    fourier_symbol,
    nearest_neighbour_kernel,
)
from .montecarlo import McEstimate, SimConfig, build_jump_sampler, estimate_mean_population, estimate_survival, run_replica
from .transition import (
    DeltaAsymptotics,
    GreenEvaluation,
    classify_recurrence,
    critical_intensity,
    gamma_tilde,
    green_function,
    solve_lambda0,
    transition_delta,
    transition_probability,
    verify_delta_asymptotics,
)
from .volterra import SurvivalCurve, TimeGrid, fit_asymptote, solve_F, solve_Q_total, solve_q_local

__version__ = "0.1.0"
