"""Event-driven simulation of the branching walk with a source at the origin.

Each replica follows the genealogy depth first: a particle is taken from a
stack and run until it branches, dies or reaches the horizon; its offspring
go back on the stack.  Between events a particle waits an exponential time
with rate (-a(0)) + (-b_1) 1{at origin} and then either jumps or branches.
Checkpoint statistics (population, particles at the origin) are accumulated
along the way.

Replica r draws from its own stream, seeded from ``SeedSequence(seed,
spawn_key=(r,))``, so estimates do not depend on how replicas are spread
over threads.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .branching import BranchingLaw
from .kernel import WalkKernel

THREADS_ENV = "BRW_SURVIVAL_THREADS"


# ---------------------------------------------------------------------------
# jump sampler


def _alias_table(p: np.ndarray):
    """Walker/Vose alias table for the probability vector ``p``."""
    n = p.size
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    scaled = p * n / p.sum()
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s], alias[s] = scaled[s], l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i], alias[i] = 1.0, i
    return prob, alias


@dataclass(frozen=True)
class JumpSampler:
    """Constant-time sampler of the jump law a(z) / (-a(0)).

    ``tail_prob`` is the probability of a jump beyond the tabulated radius
    (completed d=1 tails); such jumps have length m > R with P(m) propto
    m^-(1+alpha), drawn by rejection from a discretised Pareto law.
    """

    vectors: np.ndarray
    prob: np.ndarray
    alias: np.ndarray
    table_probs: np.ndarray
    tail_prob: float
    tail_start: int
    tail_s: float

    def probability(self, z) -> float:
        z = np.atleast_1d(z)
        hit = np.all(self.vectors == z, axis=1)
        return float((1.0 - self.tail_prob) * self.table_probs[hit].sum())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` jumps with a numpy Generator (vectorised)."""
        m = self.vectors.shape[0]
        idx = rng.integers(0, m, size=n)
        keep = rng.random(n) < self.prob[idx]
        idx = np.where(keep, idx, self.alias[idx])
        out = self.vectors[idx].copy()
        if self.tail_prob > 0:
            tail = rng.random(n) < self.tail_prob
            nt = int(tail.sum())
            lengths = np.empty(nt, dtype=np.int64)
            for i in range(nt):
                lengths[i] = _tail_length_py(rng, self.tail_start, self.tail_s)
            out[tail, 0] = lengths * rng.choice([-1, 1], size=nt)
        return out


def _tail_ratio(m, s):
    return m ** (-s) / (m ** (1.0 - s) - (m + 1.0) ** (1.0 - s))


def _tail_length_py(rng, m0, s):
    r0 = _tail_ratio(float(m0), s)
    while True:
        y = m0 * (1.0 - rng.random()) ** (-1.0 / (s - 1.0))
        m = math.floor(y)
        if rng.random() * r0 <= _tail_ratio(float(m), s):
            return m


def build_jump_sampler(k: WalkKernel) -> JumpSampler:
    w = np.asarray(k.weights, dtype=float)
    p_table = w / w.sum()
    prob, alias = _alias_table(p_table)
    tail_p = k.tail_mass / k.jump_rate if k.is_completed else 0.0
    return JumpSampler(
        vectors=np.ascontiguousarray(k.vectors, dtype=np.int64),
        prob=prob, alias=alias, table_probs=p_table,
        tail_prob=float(tail_p),
        tail_start=int(k.trunc_radius + 1) if k.is_completed else 0,
        tail_s=float(1.0 + k.tail_alpha) if k.is_completed else 0.0,
    )


# ---------------------------------------------------------------------------
# simulation engine


@numba.njit(cache=True)
def _tail_ratio_nb(m, s):
    return m ** (-s) / (m ** (1.0 - s) - (m + 1.0) ** (1.0 - s))


@numba.njit(cache=True)
def _draw_jump(vectors, prob, alias, tail_prob, tail_start, tail_s, out):
    if tail_prob > 0.0 and np.random.random() < tail_prob:
        r0 = _tail_ratio_nb(float(tail_start), tail_s)
        while True:
            y = tail_start * (1.0 - np.random.random()) ** (-1.0 / (tail_s - 1.0))
            m = math.floor(y)
            if np.random.random() * r0 <= _tail_ratio_nb(float(m), tail_s):
                break
        out[0] = m if np.random.random() < 0.5 else -m
        for j in range(1, out.size):
            out[j] = 0
        return
    n = vectors.shape[0]
    i = np.random.randint(0, n)
    if np.random.random() >= prob[i]:
        i = alias[i]
    for j in range(out.size):
        out[j] = vectors[i, j]


@numba.njit(cache=True, nogil=True)
def _run_batch(seeds, x0, horizon, checkpoints, jump_rate, vectors, prob, alias,
               tail_prob, tail_start, tail_s, branch_rate, offspring_cdf, cap):
    n_rep = seeds.size
    K = checkpoints.size
    d = x0.size
    pop = np.zeros((n_rep, K), dtype=np.int64)
    orig = np.zeros((n_rep, K), dtype=np.int64)
    caphit = np.zeros(n_rep, dtype=np.bool_)
    stack_t = np.empty(cap + 1)
    stack_x = np.empty((cap + 1, d), dtype=np.int64)
    pos = np.empty(d, dtype=np.int64)
    jump = np.empty(d, dtype=np.int64)
    n_off = offspring_cdf.size
    for r in range(n_rep):
        np.random.seed(seeds[r])
        top = 1
        stack_t[0] = 0.0
        stack_x[0, :] = x0
        hit = False
        while top > 0 and not hit:
            top -= 1
            t = stack_t[top]
            for j in range(d):
                pos[j] = stack_x[top, j]
            k = np.searchsorted(checkpoints, t)
            while True:
                at_origin = True
                for j in range(d):
                    if pos[j] != 0:
                        at_origin = False
                        break
                rate = jump_rate + (branch_rate if at_origin else 0.0)
                t_next = t - math.log(1.0 - np.random.random()) / rate
                while k < K and checkpoints[k] < t_next:
                    pop[r, k] += 1
                    if at_origin:
                        orig[r, k] += 1
                    if pop[r, k] > cap:
                        hit = True
                    k += 1
                if t_next > horizon or hit:
                    break
                t = t_next
                if np.random.random() * rate < jump_rate:
                    _draw_jump(vectors, prob, alias, tail_prob, tail_start, tail_s, jump)
                    for j in range(d):
                        pos[j] += jump[j]
                else:
                    u = np.random.random()
                    n = 0
                    while n < n_off - 1 and u >= offspring_cdf[n]:
                        n += 1
                    if top + n > cap:
                        hit = True
                        break
                    for _ in range(n):
                        stack_t[top] = t
                        for j in range(d):
                            stack_x[top, j] = pos[j]
                        top += 1
                    break
        caphit[r] = hit
    return pop, orig, caphit


@dataclass(frozen=True)
class SimConfig:
    """Everything a replica needs; checkpoints are sorted times in [0, horizon]."""

    kernel: WalkKernel
    law: BranchingLaw
    x0: tuple
    horizon: float
    checkpoints: tuple
    population_cap: int = 1_000_000
    seed: int = 12345

    def __post_init__(self):
        cps = tuple(float(c) for c in self.checkpoints)
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "x0", tuple(int(v) for v in np.atleast_1d(self.x0)))
        if len(self.x0) != self.kernel.d:
            raise ValueError("start point has the wrong dimension")
        if not cps:
            raise ValueError("at least one checkpoint is required")
        if any(c < 0 or c > self.horizon for c in cps) or list(cps) != sorted(cps):
            raise ValueError("checkpoints must be sorted and lie in [0, horizon]")
        if self.population_cap < 1:
            raise ValueError("population cap must be at least 1")


@dataclass
class ReplicaRecord:
    population: np.ndarray
    at_origin: np.ndarray
    cap_hit: bool

    @property
    def survived(self) -> np.ndarray:
        return self.population > 0


def replica_seeds(seed: int, start: int, stop: int) -> np.ndarray:
    """Per-replica 32-bit seeds derived from (seed, replica index)."""
    return np.array([np.random.SeedSequence(seed, spawn_key=(r,)).generate_state(1)[0]
                     for r in range(start, stop)], dtype=np.uint32)


def _engine_args(cfg: SimConfig, sampler: JumpSampler):
    law = cfg.law
    probs = law.offspring_probabilities()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return (
        np.asarray(cfg.x0, dtype=np.int64), float(cfg.horizon),
        np.asarray(cfg.checkpoints, dtype=float), float(cfg.kernel.jump_rate),
        sampler.vectors, sampler.prob, sampler.alias,
        sampler.tail_prob, sampler.tail_start, sampler.tail_s,
        float(law.branching_rate), cdf, int(cfg.population_cap),
    )


def run_replica(cfg: SimConfig, seed: int) -> ReplicaRecord:
    """One replica driven by the 32-bit ``seed``."""
    sampler = build_jump_sampler(cfg.kernel)
    pop, orig, cap = _run_batch(np.array([seed], dtype=np.uint32), *_engine_args(cfg, sampler))
    return ReplicaRecord(pop[0], orig[0], bool(cap[0]))


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def simulate_records(cfg: SimConfig, n_replicas: int, threads: int | None = None,
                     chunk: int = 256):
    """Per-replica checkpoint arrays, in replica order."""
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    threads = default_threads() if threads is None else max(1, int(threads))
    sampler = build_jump_sampler(cfg.kernel)
    args = _engine_args(cfg, sampler)
    bounds = [(s, min(s + chunk, n_replicas)) for s in range(0, n_replicas, chunk)]

    def work(b):
        return _run_batch(replica_seeds(cfg.seed, *b), *args)

    if threads == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    pop = np.concatenate([p[0] for p in parts])
    orig = np.concatenate([p[1] for p in parts])
    cap = np.concatenate([p[2] for p in parts])
    return pop, orig, cap


@dataclass
class McEstimate:
    """Checkpoint frequencies with binomial / sample standard errors."""

    t: np.ndarray
    survival: np.ndarray
    survival_se: np.ndarray
    presence: np.ndarray
    presence_se: np.ndarray
    mean_population: np.ndarray
    mean_population_se: np.ndarray
    n_replicas: int
    cap_hits: int

    @property
    def cap_fraction(self) -> float:
        return self.cap_hits / self.n_replicas


def _binomial_se(p, n):
    return np.sqrt(p * (1.0 - p) / n)


def estimate_survival(cfg: SimConfig, n_replicas: int, threads: int | None = None) -> McEstimate:
    """Aggregate replicas into survival, presence and mean-population estimates."""
    if n_replicas < 100:
        raise ValueError("at least 100 replicas are required")
    pop, orig, cap = simulate_records(cfg, n_replicas, threads)
    n = n_replicas
    surv = (pop > 0).mean(axis=0)
    pres = (orig > 0).mean(axis=0)
    mean = pop.mean(axis=0)
    mean_se = pop.std(axis=0, ddof=1) / math.sqrt(n)
    hits = int(cap.sum())
    if hits > 0.01 * n:
        warnings.warn(f"{hits} of {n} replicas hit the population cap; estimates are biased",
                      RuntimeWarning, stacklevel=2)
    return McEstimate(np.asarray(cfg.checkpoints), surv, _binomial_se(surv, n), pres,
                      _binomial_se(pres, n), mean, mean_se, n, hits)


def estimate_mean_population(cfg: SimConfig, n_replicas: int, threads: int | None = None) -> McEstimate:
    """Same aggregation; the mean population and its standard error are the focus."""
    return estimate_survival(cfg, n_replicas, threads)
