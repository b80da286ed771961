import math

import numba
import numpy as np
import pytest
from scipy.special import zeta
from scipy.stats import chisquare

from brw_survival.branching import BranchingLaw
from brw_survival.kernel import build_heavy_tail_kernel, nearest_neighbour_kernel
from brw_survival.montecarlo import (
    SimConfig,
    _alias_table,
    _draw_jump,
    build_jump_sampler,
    estimate_survival,
    replica_seeds,
    run_replica,
    simulate_records,
)
from brw_survival.volterra import TimeGrid, solve_Q_total

N_DRAWS = 1_000_000
SIGNIFICANCE = 1e-3
CRIT = BranchingLaw((0.5, -1.0, 0.5))
DEATH = BranchingLaw((1.0, -1.0))


@numba.njit(cache=True)
def _engine_draws(seed, n, d, vectors, prob, alias, tail_prob, tail_start, tail_s):
    np.random.seed(seed)
    out = np.empty((n, d), dtype=np.int64)
    buf = np.empty(d, dtype=np.int64)
    for i in range(n):
        _draw_jump(vectors, prob, alias, tail_prob, tail_start, tail_s, buf)
        out[i] = buf
    return out


def _draws(sampler, d, engine):
    if engine == "numba":
        return _engine_draws(2024, N_DRAWS, d, sampler.vectors, sampler.prob, sampler.alias,
                             sampler.tail_prob, sampler.tail_start, sampler.tail_s)
    return sampler.sample(np.random.default_rng(2024), N_DRAWS)


def test_alias_table_reproduces_weights():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    prob, alias = _alias_table(p)
    n = p.size
    recovered = prob / n
    for i in range(n):
        recovered[alias[i]] += (1 - prob[i]) / n
    assert np.allclose(recovered, p)


@pytest.mark.parametrize("engine", ["numpy", "numba"])
def test_jump_sampler_chi_square_finite(engine):
    k = build_heavy_tail_kernel(2, 1.2, R=5)
    s = build_jump_sampler(k)
    draws = _draws(s, 2, engine)
    index = {tuple(v): i for i, v in enumerate(s.vectors)}
    counts = np.bincount([index[tuple(v)] for v in draws], minlength=len(index))
    expected = s.table_probs * N_DRAWS
    assert chisquare(counts, expected).pvalue > SIGNIFICANCE


@pytest.mark.parametrize("engine", ["numpy", "numba"])
def test_jump_sampler_chi_square_completed_tail(engine):
    a = 1.5
    R = 64
    k = build_heavy_tail_kernel(1, a, R=R, tail="complete")
    s = build_jump_sampler(k)
    draws = _draws(s, 1, engine)[:, 0]
    assert np.all(draws != 0)
    # |z| bins: each shell up to R, then blocks of the Pareto-like tail
    edges = list(range(1, R + 2)) + [100, 200, 1000, 10_000]
    length = np.abs(draws)
    counts = np.histogram(length, bins=edges + [np.inf])[0]
    mass = np.array([zeta(1 + a, lo) - zeta(1 + a, hi)
                     for lo, hi in zip(edges, edges[1:] + [np.inf])])
    expected = mass / zeta(1 + a, 1) * N_DRAWS
    assert chisquare(counts, expected).pvalue > SIGNIFICANCE
    # sign symmetry
    assert abs(np.mean(draws > 0) - 0.5) < 4 * 0.5 / math.sqrt(N_DRAWS)
    assert s.probability(1) == pytest.approx(1 / zeta(1 + a, 1) / 2, rel=1e-12)


def test_config_validation():
    k = nearest_neighbour_kernel(1)
    with pytest.raises(ValueError):
        SimConfig(k, CRIT, (0, 0), 1.0, (1.0,))
    with pytest.raises(ValueError):
        SimConfig(k, CRIT, (0,), 1.0, ())
    with pytest.raises(ValueError):
        SimConfig(k, CRIT, (0,), 1.0, (0.5, 2.0))
    with pytest.raises(ValueError):
        SimConfig(k, CRIT, (0,), 1.0, (1.0,), population_cap=0)
    with pytest.raises(ValueError):
        estimate_survival(SimConfig(k, CRIT, (0,), 1.0, (1.0,)), 10)


def test_seeds_depend_only_on_index():
    a = replica_seeds(5, 0, 10)
    b = replica_seeds(5, 4, 10)
    assert np.array_equal(a[4:], b)
    assert len(set(a.tolist())) == 10


def test_checkpoint_zero_and_origin_counts():
    cfg = SimConfig(nearest_neighbour_kernel(1), CRIT, (0,), 5.0, (0.0, 5.0), seed=3)
    pop, orig, _ = simulate_records(cfg, 500)
    assert np.all(pop[:, 0] == 1) and np.all(orig[:, 0] == 1)
    assert np.all(orig <= pop)


def test_critical_mean_population_is_one():
    # beta = 0 keeps E mu_t = 1 for all t
    cfg = SimConfig(nearest_neighbour_kernel(1), CRIT, (0,), 5.0, (1.0, 5.0), seed=11)
    est = estimate_survival(cfg, 20_000)
    z = np.abs(est.mean_population - 1.0) / est.mean_population_se
    assert np.all(z < 4)


def test_survival_matches_volterra_pure_death():
    k = nearest_neighbour_kernel(1)
    times = (1.0, 4.0)
    est = estimate_survival(SimConfig(k, DEATH, (0,), 4.0, times, seed=21), 20_000)
    curve = solve_Q_total(k, DEATH, TimeGrid.uniform(4.0, 0.02))
    for i, t in enumerate(times):
        assert abs(est.survival[i] - curve.at(t)) < 4 * est.survival_se[i]


def test_population_cap_is_reported():
    cfg = SimConfig(nearest_neighbour_kernel(1), BranchingLaw((0.0, -5.0, 5.0)), (0,), 10.0,
                    (10.0,), population_cap=20, seed=1)
    with pytest.warns(RuntimeWarning, match="cap"):
        est = estimate_survival(cfg, 200)
    assert est.cap_hits > 0 and est.cap_fraction == est.cap_hits / 200


def test_single_replica_matches_batch():
    cfg = SimConfig(nearest_neighbour_kernel(2), CRIT, (0, 0), 10.0, (1.0, 5.0, 10.0), seed=99)
    pop, orig, _ = simulate_records(cfg, 300, threads=2)
    one = run_replica(cfg, int(replica_seeds(99, 7, 8)[0]))
    assert np.array_equal(one.population, pop[7]) and np.array_equal(one.at_origin, orig[7])
    assert np.array_equal(one.survived, pop[7] > 0)
