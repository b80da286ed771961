"""Fast property suites: kernel invariants, sign structure of f, solver invariants, MC determinism."""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from brw_survival.branching import BranchingLaw, check_f_sign_structure
from brw_survival.kernel import (
    KernelError,
    build_finite_variance_kernel,
    build_heavy_tail_kernel,
    kernel_checks,
    nearest_neighbour_kernel,
    symbol_values,
)
from brw_survival.montecarlo import SimConfig, simulate_records
from brw_survival.volterra import TimeGrid, solve_F, solve_Q_total, solve_q_local

pytestmark = pytest.mark.property

DEATH = BranchingLaw((1.0, -1.0))
CRIT = BranchingLaw((0.5, -1.0, 0.5))
SUPER = BranchingLaw((0.0, -1.0, 1.0))
LAWS_BY_BETA = {-1: DEATH, 0: CRIT, 1: SUPER}


# ---------------------------------------------------------------------------
# kernel invariants


@st.composite
def symmetric_tables(draw):
    """Nearest-neighbour base (irreducible) plus random symmetric extra pairs."""
    d = draw(st.integers(1, 3))
    table = {}
    for i in range(d):
        e = tuple(int(j == i) for j in range(d))
        w = draw(st.floats(0.01, 3.0))
        table[e] = table[tuple(-c for c in e)] = w
    for _ in range(draw(st.integers(0, 4))):
        z = tuple(draw(st.lists(st.integers(-3, 3), min_size=d, max_size=d)))
        if any(z):
            w = draw(st.floats(0.01, 3.0))
            table[z] = table[tuple(-c for c in z)] = w
    return d, table


@settings(max_examples=60, deadline=None)
@given(symmetric_tables())
def test_valid_finite_variance_invariants(drawn):
    d, table = drawn
    k = build_finite_variance_kernel(d, table)
    assert all(ok for _, ok, _ in kernel_checks(k))
    assert k.diag == pytest.approx(-math.fsum(table.values()), rel=1e-14)
    for z, w in table.items():
        assert k.rate(z) == k.rate(tuple(-c for c in z)) == w
    rng = np.random.default_rng(len(table))
    th = rng.uniform(-np.pi, np.pi, size=(32, d))
    phi = symbol_values(k, th)
    assert np.all(phi <= 1e-12) and np.allclose(phi, symbol_values(k, -th))
    assert symbol_values(k, np.zeros((1, d)))[0] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(symmetric_tables(), st.sampled_from(["drop-mirror", "negative", "sublattice"]), st.data())
def test_invalid_finite_variance_rejected(drawn, defect, data):
    d, table = drawn
    keys = sorted(table)
    z = data.draw(st.sampled_from(keys))
    bad = dict(table)
    if defect == "drop-mirror":
        del bad[tuple(-c for c in z)]
    elif defect == "negative":
        bad[z] = bad[tuple(-c for c in z)] = -1.0
    else:
        bad = {tuple(2 * c for c in v): w for v, w in table.items()}
    with pytest.raises(KernelError):
        build_finite_variance_kernel(d, bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.floats(0.05, 1.95), st.integers(1, 6), st.floats(0.1, 5.0))
def test_valid_heavy_tail_profile(d, alpha, R, c):
    k = build_heavy_tail_kernel(d, alpha, H=1.0, R=R, c=c)
    assert all(ok for _, ok, _ in kernel_checks(k))
    norms = np.linalg.norm(k.vectors, axis=1)
    assert np.all(norms <= R + 1e-12)
    assert np.allclose(k.weights, c / norms ** (d + alpha), rtol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.one_of(st.floats(-5, 0), st.floats(2, 5)))
def test_invalid_alpha_rejected(d, alpha):
    with pytest.raises(KernelError):
        build_heavy_tail_kernel(d, alpha, R=3)


# ---------------------------------------------------------------------------
# sign structure of f, 100 random laws for each sign of beta


def _random_law(rng, sign):
    """Random law with sign(beta) = sign; beta = sum_n (n-1) b_n - b_0."""
    K = int(rng.integers(2, 7))
    b = rng.uniform(0.0, 2.0, K + 1) * (rng.random(K + 1) < 0.7)
    b[1] = 0.0
    b[2] = max(b[2], 0.05)
    growth = math.fsum((n - 1) * b[n] for n in range(2, K + 1))
    if sign < 0:
        b[0] = growth * rng.uniform(1.05, 3.0)
    elif sign > 0:
        b[0] = growth * rng.uniform(0.0, 0.95)
    else:
        b[0] = growth
    b[1] = -math.fsum(np.delete(b, 1))
    return BranchingLaw(tuple(b))


@pytest.mark.parametrize("sign", [-1, 0, 1])
def test_sign_structure_hundred_laws(sign):
    rng = np.random.default_rng(100 + sign)
    for _ in range(100):
        law = _random_law(rng, sign)
        if sign == 0:
            assert abs(law.beta) < 1e-12
        else:
            assert np.sign(law.beta) == sign
        report = check_f_sign_structure(law)
        assert report.ok, (law.b, report.violations)


# ---------------------------------------------------------------------------
# Volterra solver invariants


@pytest.fixture(scope="module")
def walk1():
    return nearest_neighbour_kernel(1)


@pytest.fixture(scope="module")
def tables():
    return {}


@pytest.mark.parametrize("z", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("beta", [-1, 0, 1])
def test_F_monotone_in_time(walk1, tables, z, beta):
    law = LAWS_BY_BETA[beta]
    c = solve_F(walk1, law, z, TimeGrid.uniform(20.0, 0.05), tables=tables)
    assert c.values[0] == pytest.approx(math.exp(-z))
    assert c.solver_meta["monotone_violation"] <= 1e-12
    assert np.all(np.sign(np.diff(c.values)) * c.solver_meta["direction"] >= 0)
    assert np.all((c.values >= 0) & (c.values <= 1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_Q_in_unit_interval_and_non_increasing(seed):
    rng = np.random.default_rng(seed)
    law = _random_law(rng, int(rng.integers(-1, 2)))
    # scale to branching rate 1 so that h = 0.1 resolves the source dynamics
    law = BranchingLaw(tuple(np.array(law.b) / law.branching_rate))
    k = nearest_neighbour_kernel(int(rng.integers(1, 3)))
    grid = TimeGrid.uniform(8.0, 0.1)
    for x in (None, (2,) + (0,) * (k.d - 1)):
        Q = solve_Q_total(k, law, grid, x).values
        assert np.all((Q >= 0) & (Q <= 1))
        assert np.all(np.diff(Q) <= 1e-12)
    q = solve_q_local(k, law, grid).values
    assert np.all((q >= -1e-12) & (q <= 1 + 1e-12))


@pytest.mark.parametrize("x", [0, 2])
@pytest.mark.parametrize("beta", [-1, 0, 1])
def test_laplace_at_z30_matches_survival(walk1, tables, x, beta):
    law = LAWS_BY_BETA[beta]
    grid = TimeGrid.uniform(20.0, 0.05)
    Q = solve_Q_total(walk1, law, grid, x, tables=tables).values
    F = solve_F(walk1, law, 30.0, grid, x, tables=tables).values
    assert np.max(np.abs(1.0 - F - Q)) < 1e-9


def test_step_halving_ratio(walk1, tables):
    vals = [float(solve_Q_total(walk1, CRIT, TimeGrid.uniform(10.0, h), tables=tables).values[-1])
            for h in (0.2, 0.1, 0.05)]
    ratio = (vals[0] - vals[1]) / (vals[1] - vals[2])
    assert 3.5 <= ratio <= 4.5


# ---------------------------------------------------------------------------
# Monte Carlo determinism


@pytest.mark.parametrize("kernel", [nearest_neighbour_kernel(2),
                                    build_heavy_tail_kernel(1, 1.5, R=64, tail="complete")],
                         ids=["nn-d2", "heavy-d1"])
def test_mc_deterministic_across_runs_and_threads(kernel):
    cfg = SimConfig(kernel, CRIT, (0,) * kernel.d, 10.0, (1.0, 5.0, 10.0), seed=99)
    ref = simulate_records(cfg, 1000, threads=1)
    for threads, chunk in ((1, 256), (4, 256), (3, 64)):
        other = simulate_records(cfg, 1000, threads=threads, chunk=chunk)
        for a, b in zip(ref, other):
            assert np.array_equal(a, b)
