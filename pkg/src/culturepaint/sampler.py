"""MCMC for the Dirichlet-process mixture of DM components.

Each iteration runs a collapsed Gibbs scan over CP assignments (Neal's
Algorithm 8 with ``m`` auxiliary components) and then refreshes every active
component's concentration vector by data augmentation:

1. table counts per unit and decoration from a Polya urn,
2. proportions from their conjugate Dirichlet,
3. the total concentration by griddy Gibbs on a log-spaced grid.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as kern
from .model import BaseMeasureConfig, ComponentParams, CountTable, sample_base_measure

log = logging.getLogger(__name__)

WORKERS_ENV = "CULTUREPAINT_WORKERS"
PRECISION_UPDATES = ("augmented", "marginal")


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``precision_update`` selects the conditional used for the total
    concentration: ``"augmented"`` conditions on the auxiliary table counts,
    ``"marginal"`` evaluates the DM likelihood product over members given the
    proportions.  Both leave the posterior invariant.
    """

    gamma: float = 1.0
    m: int = 3
    iterations: int = 1000
    burn_in_fraction: float = 0.30
    thin: int = 100
    grid_points: int = 200
    grid_range: tuple = (1e-3, 1e3)
    seed: int = 0
    exp_mean: float = 1.0
    precision_update: str = "augmented"

    def __post_init__(self):
        object.__setattr__(self, "grid_range", tuple(float(x) for x in self.grid_range))
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError("burn_in_fraction must be in [0, 1)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        low, high = self.grid_range
        if not 0 < low < high:
            raise ValueError("grid_range must satisfy 0 < low < high")
        if not self.exp_mean > 0:
            raise ValueError("exp_mean must be > 0")
        if self.precision_update not in PRECISION_UPDATES:
            raise ValueError(f"precision_update must be one of {PRECISION_UPDATES}")

    @property
    def burn_in(self) -> int:
        return int(math.floor(self.burn_in_fraction * self.iterations))

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def base_measure(self, D: int) -> BaseMeasureConfig:
        return BaseMeasureConfig(D=D, exp_mean=self.exp_mean)

    def grid(self) -> np.ndarray:
        low, high = self.grid_range
        return np.geomspace(low, high, self.grid_points)


@dataclass(frozen=True)
class ChainState:
    """Sampler state.  Labels are 1..K, ``components[k-1]`` belongs to label k."""

    assignments: np.ndarray
    components: tuple
    occupancy: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64)
        occ = np.array(self.occupancy, dtype=np.int64)
        a.setflags(write=False)
        occ.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def N(self) -> int:
        return self.assignments.size

    def check(self) -> None:
        """Raise AssertionError unless labels are contiguous and occupancies match."""
        K = self.K
        if self.N and (self.assignments.min() < 1 or self.assignments.max() > K):
            raise AssertionError("labels outside 1..K")
        occ = np.bincount(self.assignments, minlength=K + 1)[1:]
        if not np.array_equal(occ, self.occupancy):
            raise AssertionError("occupancy does not match assignments")
        if np.any(occ < 1):
            raise AssertionError("empty active component")
        if occ.sum() != self.N:
            raise AssertionError("occupancy does not sum to N")


@dataclass(frozen=True)
class Sample:
    """One stored posterior draw.

    ``alphas[k-1]`` is the concentration vector of label k; a row of NaN marks
    a label that is unused in this sample (only after relabelling).
    """

    iteration: int
    assignments: np.ndarray
    alphas: np.ndarray
    log_likelihood: float
    n_clusters: int

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64)
        al = np.array(self.alphas, dtype=np.float64)
        if al.ndim == 1:
            al = al.reshape(1, -1)
        a.setflags(write=False)
        al.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "alphas", al)

    @property
    def components(self) -> list:
        return [ComponentParams(r) for r in self.alphas if np.all(np.isfinite(r))]

    def sizes(self) -> np.ndarray:
        """Member count per label (index 0 is label 1)."""
        return np.bincount(self.assignments, minlength=self.assignments.max() + 1)[1:]


@dataclass(frozen=True)
class ChainRecord:
    """Thinned post-burn-in samples of one or more chains over one data set.

    ``k_primary`` is set once small clusters have been merged into the
    residual label ``k_primary + 1``.
    """

    samples: tuple
    config: SamplerConfig
    data_fingerprint: str
    unit_keys: tuple = ()
    unit_totals: tuple = ()
    chain_index: int = 0
    k_primary: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "unit_keys", tuple(tuple(k) for k in self.unit_keys))
        object.__setattr__(self, "unit_totals", tuple(int(t) for t in self.unit_totals))

    def __len__(self):
        return len(self.samples)

    @property
    def n_units(self) -> int:
        return self.samples[0].assignments.size if self.samples else len(self.unit_keys)

    def assignment_matrix(self) -> np.ndarray:
        """(S, N) matrix of labels."""
        return np.stack([s.assignments for s in self.samples])

    def log_likelihoods(self) -> np.ndarray:
        return np.array([s.log_likelihood for s in self.samples])

    def n_clusters(self) -> np.ndarray:
        return np.array([s.n_clusters for s in self.samples], dtype=np.int64)

    def max_likelihood_index(self) -> int:
        """Index of the stored sample with the largest log-likelihood (first on ties)."""
        return int(np.argmax(self.log_likelihoods()))

    def with_samples(self, samples, **changes) -> "ChainRecord":
        return replace(self, samples=tuple(samples), **changes)


class _Workspace:
    """Mutable kernel arrays for one chain."""

    def __init__(self, data: CountTable, config: SamplerConfig):
        counts = np.ascontiguousarray(data.counts, dtype=np.int64)
        N, D = counts.shape
        rows, cols = np.nonzero(counts)
        self.nz_ptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(self.nz_ptr, rows + 1, 1)
        self.nz_ptr = np.cumsum(self.nz_ptr)
        self.nz_idx = cols.astype(np.int64)
        self.nz_val = counts[rows, cols].astype(np.int64)
        self.totals = counts.sum(axis=1).astype(np.int64)
        self.N, self.D = N, D
        cap = N + 1
        self.alpha = np.ones((cap, D))
        self.lg_alpha = np.zeros((cap, D))
        self.abar = np.ones(cap)
        self.lg_abar = np.zeros(cap)
        self.assign = np.zeros(N, dtype=np.int64)
        self.occ = np.zeros(cap, dtype=np.int64)
        self.K = 0
        self.config = config
        self.grid = config.grid()
        self.log_grid = np.log(self.grid)
        self.mode = kern.AUGMENTED if config.precision_update == "augmented" else kern.MARGINAL

    def load(self, state: ChainState) -> None:
        if state.N != self.N:
            raise ValueError(f"state has {state.N} units, data has {self.N}")
        self.assign[:] = state.assignments - 1
        self.K = state.K
        self.occ[:] = 0
        self.occ[: self.K] = state.occupancy
        for k, comp in enumerate(state.components):
            if comp.D != self.D:
                raise ValueError("component dimension does not match data")
            kern.set_component(k, comp.alpha, self.alpha, self.lg_alpha, self.abar, self.lg_abar)

    def state(self, iteration: int) -> ChainState:
        K = self.K
        comps = tuple(ComponentParams(self.alpha[k].copy()) for k in range(K))
        return ChainState(self.assign + 1, comps, self.occ[:K].copy(), iteration)

    def sweep(self, rng) -> None:
        c = self.config
        self.K = kern.sweep_assignments(
            rng, self.assign, self.occ, self.K, self.alpha, self.lg_alpha, self.abar,
            self.lg_abar, self.nz_ptr, self.nz_idx, self.nz_val, self.totals,
            float(c.gamma), int(c.m), float(c.exp_mean))

    def update(self, rng) -> None:
        kern.update_components(
            rng, self.assign, self.K, self.alpha, self.lg_alpha, self.abar, self.lg_abar,
            self.nz_ptr, self.nz_idx, self.nz_val, self.totals, self.grid, self.log_grid,
            float(self.config.exp_mean), self.mode)

    def log_likelihood(self) -> float:
        return kern.data_log_likelihood(
            self.assign, self.alpha, self.lg_alpha, self.abar, self.lg_abar,
            self.nz_ptr, self.nz_idx, self.nz_val, self.totals)

    def sample(self, iteration: int) -> Sample:
        K = self.K
        return Sample(iteration, self.assign + 1, self.alpha[:K].copy(),
                      self.log_likelihood(), K)


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Private generator of chain ``chain_index`` derived from ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(chain_index)])
    return np.random.Generator(np.random.PCG64(ss))


def initial_state(data: CountTable, config: SamplerConfig, rng: np.random.Generator) -> ChainState:
    """All unit-levels in one component drawn from G0."""
    if data.N == 0:
        raise ValueError("data has no unit-levels")
    comp = sample_base_measure(config.base_measure(data.D), rng)
    return ChainState(np.ones(data.N, dtype=np.int64), (comp,), np.array([data.N]), 0)


def gibbs_sweep_assignments(state: ChainState, data: CountTable, config: SamplerConfig,
                            rng: np.random.Generator) -> ChainState:
    """Resample every unit's CP label once, in index order (Algorithm 8)."""
    ws = _Workspace(data, config)
    ws.load(state)
    ws.sweep(rng)
    return ws.state(state.iteration)


def update_component_params(state: ChainState, data: CountTable, config: SamplerConfig,
                            rng: np.random.Generator) -> ChainState:
    """Refresh the concentration vector of every active component."""
    if np.any(np.asarray(state.occupancy) < 1):
        raise ValueError("state has an empty component")
    ws = _Workspace(data, config)
    ws.load(state)
    ws.update(rng)
    return ws.state(state.iteration)


def run_chain(data: CountTable, config: SamplerConfig, chain_index: int = 0,
              check_invariants: bool = False) -> ChainRecord:
    """Run one chain and keep every ``thin``-th post-burn-in state.

    Iteration ``t`` (1-based) is stored when ``t > burn_in`` and
    ``(t - burn_in) % thin == 0``.  Identical inputs give identical records.
    """
    if data.N == 0:
        raise ValueError("data has no unit-levels")
    rng = chain_rng(config.seed, chain_index)
    ws = _Workspace(data, config)
    ws.load(initial_state(data, config, rng))
    burn = config.burn_in
    samples = []
    for t in range(1, config.iterations + 1):
        ws.sweep(rng)
        ws.update(rng)
        if check_invariants:
            ws.state(t).check()
        if t > burn and (t - burn) % config.thin == 0:
            samples.append(ws.sample(t))
    return ChainRecord(
        tuple(samples), config, data.fingerprint,
        unit_keys=tuple(u.key for u in data.units),
        unit_totals=tuple(int(x) for x in data.totals),
        chain_index=chain_index,
    )


def _run_chain_job(args):
    data, config, idx = args
    return run_chain(data, config, idx)


def default_workers(n_chains: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(n_chains, os.cpu_count() or 1))


def run_chains(data: CountTable, config: SamplerConfig, n_chains: int,
               workers: Optional[int] = None) -> list:
    """Independent chains ``0..n_chains-1``; one worker process per chain."""
    if workers is None:
        workers = default_workers(n_chains)
    jobs = [(data, config, i) for i in range(n_chains)]
    if workers <= 1 or n_chains == 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chain_job, jobs))


def crp_expected_clusters(N: int, gamma: float) -> float:
    """Prior mean number of clusters among N items under a CRP(gamma)."""
    if N < 1 or not gamma > 0:
        raise ValueError("need N >= 1 and gamma > 0")
    return math.fsum(gamma / (gamma + i) for i in range(N))


def crp_log_partition_probability(assignments, gamma: float) -> float:
    """Log probability of the partition under the CRP prior."""
    a = np.asarray(assignments)
    sizes = np.bincount(a)[np.bincount(a) > 0]
    n = a.size
    return (sizes.size * math.log(gamma) + sum(math.lgamma(s) for s in sizes)
            + math.lgamma(gamma) - math.lgamma(gamma + n))


def joint_log_density(sample: Sample, data: CountTable, config: SamplerConfig) -> dict:
    """Prior, base-measure and likelihood parts of the joint log density of a sample."""
    from .model import base_measure_log_density, dm_log_likelihood

    base = config.base_measure(data.D)
    comps = sample.components
    prior = crp_log_partition_probability(sample.assignments, config.gamma)
    g0 = math.fsum(base_measure_log_density(c, base) for c in comps)
    ll = math.fsum(dm_log_likelihood(data.counts[i], comps[c - 1])
                   for i, c in enumerate(sample.assignments))
    return {"partition": prior, "base_measure": g0, "likelihood": ll,
            "total": prior + g0 + ll}
