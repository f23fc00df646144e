"""Synthetic stratified count data with known CPs, and scoring of fits against it."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import ComponentParams, CountTable, UnitLevel, expected_frequencies
from .sampler import ChainRecord, SamplerConfig, run_chain

__all__ = [
    "SimulationConfig",
    "SimulationTruth",
    "simulate_dataset",
    "apply_mixing",
    "evaluate_run",
    "run_study",
    "study_grid",
]

# full simulation grid
GRID_D = (3, 7, 15, 25)
GRID_COUNTS = (50, 250, 1000, 5000, 25000)
GRID_RHO = (0.0, 0.1, 0.5)
GRID_F = (0.0, 0.1, 0.5)

MIN_MEMBERS = 5


@dataclass(frozen=True)
class SimulationConfig:
    n_cps: int = 5
    n_sites: int = 5
    levels_per_site: int = 20
    D: int = 15
    counts_per_unit: int = 1000
    rho: float = 0.1
    f: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_cps", "n_sites", "levels_per_site", "D", "counts_per_unit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must be in [0, 1]")
        if not 0 <= self.f <= 0.5:
            raise ValueError("f must be in [0, 0.5]")
        if self.rho > 0 and self.n_cps < 2:
            raise ValueError("switching needs at least two CPs")

    @property
    def n_units(self) -> int:
        return self.n_sites * self.levels_per_site


@dataclass(frozen=True)
class SimulationTruth:
    true_assignments: np.ndarray
    true_params: tuple
    config: SimulationConfig

    def __post_init__(self):
        a = np.array(self.true_assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "true_assignments", a)
        object.__setattr__(self, "true_params", tuple(self.true_params))
        if len(self.true_params) != self.config.n_cps:
            raise ValueError("need one parameter vector per CP")

    def n_effective(self, min_members: int = MIN_MEMBERS) -> int:
        """CPs holding at least ``min_members`` unit-levels."""
        sizes = np.bincount(self.true_assignments, minlength=self.config.n_cps + 1)[1:]
        return int(np.sum(sizes >= min_members))


def simulate_dataset(config: SimulationConfig):
    """Generate ``(CountTable, SimulationTruth)``.

    Sites are independent columns of ``levels_per_site`` levels.  The top
    level's CP is uniform; each following level moves to a uniformly chosen
    different CP with probability ``rho``.  Each CP has iid Exponential(1)
    concentrations; counts are DM draws with a fixed total, then mixed
    between neighbouring levels with :func:`apply_mixing`.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed) & 0xFFFFFFFFFFFFFFFF, 7]))
    K, D = config.n_cps, config.D
    params = []
    for _ in range(K):
        a = rng.standard_exponential(D)
        params.append(ComponentParams(np.maximum(a, np.finfo(float).tiny)))

    labels = np.empty(config.n_units, dtype=np.int64)
    i = 0
    for _site in range(config.n_sites):
        c = int(rng.integers(K))
        for j in range(config.levels_per_site):
            if j > 0 and rng.random() < config.rho:
                c = (c + 1 + int(rng.integers(K - 1))) % K
            labels[i] = c + 1
            i += 1

    units = []
    i = 0
    for s in range(config.n_sites):
        for j in range(config.levels_per_site):
            counts = _dm_draw(rng, params[labels[i] - 1].alpha, config.counts_per_unit)
            units.append(UnitLevel(f"S{s + 1}", "1", None, j, tuple(int(x) for x in counts)))
            i += 1
    table = CountTable(tuple(units), tuple(f"d{d + 1}" for d in range(D)))
    truth = SimulationTruth(labels, tuple(params), config)
    if config.f > 0:
        table = apply_mixing(table, truth, config.f, rng)
    return table, truth


def _dm_draw(rng, alpha, n):
    # Dirichlet then multinomial: same law as the sequential Polya urn
    p = rng.dirichlet(alpha)
    if not np.all(np.isfinite(p)):
        p = np.zeros_like(alpha)
        p[int(np.argmax(alpha))] = 1.0
    return rng.multinomial(n, p / p.sum())


def apply_mixing(data: CountTable, truth: Optional[SimulationTruth], f: float,
                 rng: np.random.Generator) -> CountTable:
    """Move a fraction ``f`` of each level's sherds to its neighbours.

    Within each column (site/EU/RU) ordered by level, each level picks
    ``round(f * total)`` of its own sherds without replacement.  Interior
    levels send ``floor(n/2)`` up and ``floor(n/2)`` down; end levels send all
    ``n`` to their single neighbour.  All moves are drawn from the pre-mixing
    counts and applied together, so column totals are conserved.
    """
    if not 0 <= f <= 0.5:
        raise ValueError("f must be in [0, 0.5]")
    if f == 0:
        return data
    counts = np.array(data.counts, dtype=np.int64)
    new = counts.copy()
    columns: dict = {}
    for idx, u in enumerate(data.units):
        columns.setdefault(u.column, []).append(idx)
    for col in columns.values():
        col = sorted(col, key=lambda r: data.units[r].level)
        L = len(col)
        if L < 2:
            continue
        for pos, r in enumerate(col):
            n = int(round(f * counts[r].sum()))
            if n == 0:
                continue
            if pos == 0:
                sends = [(col[1], n)]
            elif pos == L - 1:
                sends = [(col[L - 2], n)]
            else:
                h = n // 2
                sends = [(col[pos - 1], h), (col[pos + 1], h)]
            pool = counts[r].copy()
            for dest, k in sends:
                if k == 0:
                    continue
                moved = rng.multivariate_hypergeometric(pool, k)
                pool -= moved
                new[r] -= moved
                new[dest] += moved
    units = tuple(
        UnitLevel(u.site, u.eu, u.ru, u.level, tuple(int(x) for x in new[i]))
        for i, u in enumerate(data.units)
    )
    return CountTable(units, data.decoration_labels)


def _contingency(inferred, true, n_inf, n_true):
    C = np.zeros((n_inf, n_true), dtype=np.int64)
    np.add.at(C, (inferred - 1, true - 1), 1)
    return C


def evaluate_run(chain: ChainRecord, truth: SimulationTruth,
                 min_members: int = MIN_MEMBERS) -> dict:
    """Score a fit against the generating truth.

    Uses the maximum-likelihood sample.  Its labels are matched to the true
    CPs by maximum overlap (Hungarian on the contingency table).

    ``kl``
        Summed per-unit KL divergence between the one-hot true assignment
        and the one-hot matched inferred assignment, with the missed label
        floored at ``1/N``: each mismatched unit costs ``log N``.
    ``correlation``
        Mean Pearson correlation between expected-frequency vectors of
        matched inferred and true CPs.
    ``modal_k``
        Most frequent per-sample number of clusters with at least
        ``min_members`` members (smallest on ties).
    """
    ml = chain.samples[chain.max_likelihood_index()]
    inferred = ml.assignments
    true = truth.true_assignments
    N = true.size
    n_inf = int(inferred.max())
    n_true = truth.config.n_cps
    C = _contingency(inferred, true, n_inf, n_true)
    rows, cols = linear_sum_assignment(-C)
    matched = {int(r) + 1: int(c) + 1 for r, c in zip(rows, cols)}
    mapped = np.array([matched.get(int(c), 0) for c in inferred])
    mismatches = int(np.sum(mapped != true))
    kl = mismatches * math.log(N) if N > 1 else 0.0

    comps = ml.alphas
    corrs = []
    for r, c in zip(rows, cols):
        if C[r, c] == 0:
            continue
        a = comps[r] / comps[r].sum()
        b = expected_frequencies(truth.true_params[c])
        if np.std(a) == 0 or np.std(b) == 0:
            continue
        corrs.append(float(np.corrcoef(a, b)[0, 1]))
    correlation = float(np.mean(corrs)) if corrs else float("nan")

    ks = np.array([int(np.sum(s.sizes() >= min_members)) for s in chain.samples])
    values, freq = np.unique(ks, return_counts=True)
    modal_k = int(values[np.argmax(freq)])
    return {
        "kl": kl,
        "mismatches": mismatches,
        "correlation": correlation,
        "modal_k": modal_k,
        "true_k": truth.n_effective(min_members),
    }


def study_grid(base: Optional[SimulationConfig] = None) -> list:
    """The 4 x 5 x 3 x 3 parameter grid of the simulation study."""
    base = base or SimulationConfig()
    return [
        replace(base, D=D, counts_per_unit=n, rho=rho, f=f)
        for D, n, rho, f in itertools.product(GRID_D, GRID_COUNTS, GRID_RHO, GRID_F)
    ]


STUDY_FIELDS = ("cell", "replicate", "D", "counts_per_unit", "rho", "f", "n_cps",
                "sim_seed", "sampler_seed", "kl", "mismatches", "correlation",
                "modal_k", "true_k")
SUMMARY_FIELDS = ("cell", "D", "counts_per_unit", "rho", "f", "reps", "kl_mean", "kl_sd",
                  "correlation_mean", "correlation_sd", "modal_k_mean", "true_k_mean", "frac_modal_k_correct")


def run_study(grid: Sequence[SimulationConfig], reps: int,
              sampler: Optional[SamplerConfig] = None, progress=None) -> tuple:
    """Run ``reps`` seeded replicates per grid cell.

    Replicate ``r`` of cell ``c`` simulates with seed ``base_seed + 1000*c + r``
    and samples with the sampler seed offset by the same amount.  Returns
    ``(rows, summary)`` as lists of dicts in (cell, replicate) order.
    """
    if not grid:
        raise ValueError("empty grid")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    sampler = sampler or SamplerConfig(iterations=2000, thin=10)
    rows = []
    for ci, cell in enumerate(grid):
        for r in range(reps):
            offset = 1000 * ci + r
            sim_cfg = replace(cell, seed=cell.seed + offset)
            table, truth = simulate_dataset(sim_cfg)
            scfg = replace(sampler, seed=sampler.seed + offset)
            chain = run_chain(table, scfg)
            m = evaluate_run(chain, truth)
            rows.append({
                "cell": ci, "replicate": r, "D": cell.D,
                "counts_per_unit": cell.counts_per_unit, "rho": cell.rho, "f": cell.f,
                "n_cps": cell.n_cps, "sim_seed": sim_cfg.seed, "sampler_seed": scfg.seed,
                **m,
            })
            if progress:
                progress(rows[-1])
    return rows, summarize_study(rows)


def summarize_study(rows: Sequence[dict]) -> list:
    out = []
    cells: dict = {}
    for row in rows:
        cells.setdefault(row["cell"], []).append(row)
    for ci in sorted(cells):
        rs = cells[ci]
        kl = np.array([r["kl"] for r in rs], dtype=float)
        corr = np.array([r["correlation"] for r in rs], dtype=float)
        mk = np.array([r["modal_k"] for r in rs], dtype=float)
        first = rs[0]
        out.append({
            "cell": ci, "D": first["D"], "counts_per_unit": first["counts_per_unit"],
            "rho": first["rho"], "f": first["f"], "reps": len(rs),
            "kl_mean": float(kl.mean()), "kl_sd": float(kl.std(ddof=1)) if len(rs) > 1 else 0.0,
            "correlation_mean": float(np.nanmean(corr)) if np.any(np.isfinite(corr)) else float("nan"),
            "correlation_sd": float(np.nanstd(corr, ddof=1)) if np.sum(np.isfinite(corr)) > 1 else 0.0,
            "modal_k_mean": float(mk.mean()),
            "true_k_mean": float(np.mean([r["true_k"] for r in rs])),
            "frac_modal_k_correct": float(np.mean(mk == first["n_cps"])),
        })
    return out


def write_study_csv(rows: Sequence[dict], path, fields=STUDY_FIELDS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fields})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
