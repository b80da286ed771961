"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 numerical non-convergence,
3 verification-scenario failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

from .branching import (
    CRITICAL,
    SUPERCRITICAL,
    LawError,
    check_f_sign_structure,
    classify_criticality,
)
from .config import (
    ConfigError,
    config_hash,
    kernel_from_config,
    law_from_config,
    load_config,
    parse_floats,
    parse_points,
    resolved_dict,
)
from .kernel import KernelError, kernel_checks
from .montecarlo import THREADS_ENV, SimConfig, estimate_survival
from .scenarios import SCENARIOS, run_scenario
from .spectral import QuadratureError
from .transition import (
    classify_recurrence,
    critical_intensity,
    effective_classification,
    green_function,
    solve_lambda0,
)
from .volterra import TimeGrid, VolterraError, fit_asymptote, solve_Q_total

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_SCENARIO = 0, 1, 2, 3


def _open_csv(path, cp):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    fh.write(f"# config-sha256: {config_hash(cp)}\n")
    fh.write(f"# config: {json.dumps(resolved_dict(cp), sort_keys=True)}\n")
    return fh, csv.writer(fh)


def _close(fh):
    if fh is not sys.stdout:
        fh.close()


def _load(args):
    overrides = list(args.set or [])
    if getattr(args, "output", None):
        overrides.append(f"output.path={args.output}")
    return load_config(args.config, overrides)


def _output_path(cp, args):
    return getattr(args, "output", None) or cp.get("output", "path", fallback=None)


# ---------------------------------------------------------------------------
# commands


def cmd_kernel_validate(args) -> int:
    cp = _load(args)
    try:
        k = kernel_from_config(cp)
    except (KernelError, ConfigError) as exc:
        print(f"FAIL  construction: {exc}")
        return EXIT_INVALID
    ok = True
    for name, passed, detail in kernel_checks(k):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_green(args) -> int:
    overrides = []
    if args.lam:
        overrides.append("green.lambdas=" + ", ".join(repr(v) for v in args.lam))
    if args.x:
        overrides.append(f"green.points={args.x}")
    args.set = list(args.set or []) + overrides
    cp = _load(args)
    k = kernel_from_config(cp)
    lams = parse_floats(cp.get("green", "lambdas", fallback="0"))
    pts = parse_points(cp.get("green", "points", fallback=",".join(["0"] * k.d)), k.d)
    fh, w = _open_csv(_output_path(cp, args), cp)
    w.writerow(["lambda", "x", "value", "error_estimate", "classification"])
    try:
        for lam in lams:
            for x in pts:
                g = green_function(k, lam, x, None)
                val = "inf" if g.divergent else repr(g.value)
                w.writerow([lam, " ".join(map(str, x)), val, g.quad_error, g.classification])
    finally:
        _close(fh)
    return EXIT_OK


def cmd_criticality(args) -> int:
    cp = _load(args)
    k = kernel_from_config(cp)
    law = law_from_config(cp)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cls = classify_recurrence(k, probe=not args.no_probe)
        beta_c = critical_intensity(k)
    for wmsg in caught:
        print(f"warning: {wmsg.message}")
    regime = classify_criticality(law, beta_c)
    print(f"recurrence (criteria): {cls}")
    print(f"recurrence (as represented): {effective_classification(k)}")
    print(f"beta_c: {beta_c:.12g}")
    print(f"beta: {law.beta:.12g}")
    print(f"regime: {regime}")
    report = check_f_sign_structure(law)
    print(f"f sign structure: {'ok' if report.ok else '; '.join(report.violations)}"
          + (f" (u_* = {report.u_star:.12g})" if report.u_star is not None else ""))
    if regime == SUPERCRITICAL:
        print(f"lambda_0: {solve_lambda0(k, law.beta):.12g}")
    elif regime == CRITICAL:
        print("lambda_0: 0 (critical)")
    return EXIT_OK


def _grid_from_config(cp):
    scheme = cp.get("survive", "grid", fallback="geometric")
    T = cp.getfloat("survive", "T", fallback=100.0)
    h = cp.getfloat("survive", "h", fallback=0.05)
    if scheme == "uniform":
        return TimeGrid.uniform(T, h)
    if scheme == "geometric":
        return TimeGrid.geometric(T, h, cp.getfloat("survive", "t_switch", fallback=10.0),
                                  cp.getfloat("survive", "ratio", fallback=1.1))
    raise ConfigError(f"unknown grid scheme {scheme!r}")


def cmd_survive(args) -> int:
    cp = _load(args)
    k = kernel_from_config(cp)
    law = law_from_config(cp)
    grid = _grid_from_config(cp)
    pts = parse_points(cp.get("survive", "x", fallback=",".join(["0"] * k.d)), k.d)
    tol = cp.getfloat("survive", "tol", fallback=1e-10)
    max_iter = cp.getint("survive", "max_iter", fallback=100)
    tables = {}
    curves = [solve_Q_total(k, law, grid, x, tol=tol, max_iter=max_iter, tables=tables) for x in pts]
    fh, w = _open_csv(_output_path(cp, args), cp)
    w.writerow(["t", "x", "value", "residual", "iterations"])
    try:
        for c in curves:
            meta = c.solver_meta
            for i, t in enumerate(c.t):
                w.writerow([repr(float(t)), " ".join(map(str, c.x)), repr(float(c.values[i])),
                            meta["step_change"][i], meta["iterations"][i]])
    finally:
        _close(fh)
    model = cp.get("survive", "fit", fallback="")
    if model:
        window = parse_floats(cp.get("survive", "fit_window", fallback=""))
        for c in curves:
            fit = fit_asymptote(c, model, tuple(window) if window else None)
            print(f"fit x={c.x}: model={fit.model} exponent={fit.exponent} "
                  f"amplitude={fit.amplitude:.6g} residual={fit.residual:.3g}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cp = _load(args)
    k = kernel_from_config(cp)
    law = law_from_config(cp)
    sec = "simulate"
    cps = parse_floats(cp.get(sec, "checkpoints", fallback="1, 5, 10"))
    x0 = parse_points(cp.get(sec, "x0", fallback=",".join(["0"] * k.d)), k.d)[0]
    cfg = SimConfig(k, law, x0, cp.getfloat(sec, "horizon", fallback=max(cps)), cps,
                    cp.getint(sec, "cap", fallback=1_000_000), cp.getint(sec, "seed", fallback=12345))
    est = estimate_survival(cfg, cp.getint(sec, "n_replicas", fallback=10_000), args.threads)
    fh, w = _open_csv(_output_path(cp, args), cp)
    w.writerow(["t", "Q_hat", "se", "presence_hat", "se", "mean_pop", "se", "n", "cap_hits"])
    try:
        for i, t in enumerate(est.t):
            w.writerow([t, est.survival[i], est.survival_se[i], est.presence[i], est.presence_se[i],
                        est.mean_population[i], est.mean_population_se[i], est.n_replicas, est.cap_hits])
    finally:
        _close(fh)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.list or not args.scenario:
        print("\n".join(sorted(SCENARIOS)))
        return EXIT_OK
    if args.scenario not in SCENARIOS:
        print(f"unknown scenario {args.scenario!r}; available: {', '.join(sorted(SCENARIOS))}",
              file=sys.stderr)
        return EXIT_INVALID
    kwargs = {}
    if args.threads is not None and "threads" in SCENARIOS[args.scenario].__code__.co_varnames:
        kwargs["threads"] = args.threads
    rows = run_scenario(args.scenario, **kwargs)
    for r in rows:
        print(r.line())
    ok = all(r.passed for r in rows)
    print(f"scenario {args.scenario}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_SCENARIO


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brw-survival",
                                description="Survival analysis for branching random walks with one source.")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for simulations (default: ${THREADS_ENV} or CPU count)")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="key-value configuration file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a configuration entry (repeatable)")
        sp.add_argument("-o", "--output", help="CSV output path (default: stdout)")
        sp.set_defaults(func=func)
        return sp

    with_config("kernel-validate", cmd_kernel_validate, "check kernel invariants")
    g = with_config("green", cmd_green, "Green's function values")
    g.add_argument("--lambda", dest="lam", type=float, action="append", help="lambda value (repeatable)")
    g.add_argument("--x", help="points, e.g. '0,0,0; 1,0,0'")
    c = with_config("criticality", cmd_criticality, "recurrence, beta_c, regime and lambda_0")
    c.add_argument("--no-probe", action="store_true", help="skip the numerical recurrence probe")
    with_config("survive", cmd_survive, "solve the survival equation")
    with_config("simulate", cmd_simulate, "Monte Carlo estimates")
    v = sub.add_parser("verify", help="run a named verification scenario")
    v.add_argument("scenario", nargs="?")
    v.add_argument("--list", action="store_true", help="list scenario names")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        return args.func(args)
    except (KernelError, LawError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (QuadratureError, VolterraError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
