"""From raw chains to culture paintings.

The pipeline for a fitted chain is::

    k = select_primary_k(chain)
    agg = aggregate_small_clusters(chain, k)
    rel = relabel_chain(agg)
    p = painting(rel)

The incidence matrix is label-free and can be computed from any chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.optimize import linear_sum_assignment

from .model import ComponentParams, CountTable, expected_frequencies
from .sampler import ChainRecord, Sample

__all__ = [
    "IncidenceMatrix",
    "PaintingMatrix",
    "incidence_matrix",
    "cluster_incidence",
    "select_primary_k",
    "k_histogram",
    "aggregate_small_clusters",
    "relabel_chain",
    "painting",
    "cluster_components",
    "single_linkage",
    "kl_divergence",
]


@dataclass(frozen=True)
class IncidenceMatrix:
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PaintingMatrix:
    """Posterior CP-membership fractions per unit-level.

    ``labels[j]`` names column ``j``; ``residual`` is the label of the merged
    small-cluster column, if any.
    """

    keys: tuple
    labels: tuple
    values: np.ndarray
    weights: np.ndarray
    residual: Optional[int] = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def _require_samples(chain: ChainRecord) -> None:
    if len(chain) == 0:
        raise ValueError("chain has no stored samples")


def incidence_matrix(chain: ChainRecord) -> IncidenceMatrix:
    """Fraction of samples in which each pair of unit-levels shares a label."""
    _require_samples(chain)
    A = chain.assignment_matrix()
    S, N = A.shape
    counts = np.zeros((N, N), dtype=np.int64)
    for row in A:
        counts += row[:, None] == row[None, :]
    return IncidenceMatrix(counts / S)


def _pam_cost(D, medoids):
    return D[:, medoids].min(axis=1).sum()


def cluster_incidence(matrix, k: int, seed: int = 0) -> np.ndarray:
    """PAM k-medoids on ``1 - incidence``; returns labels 1..k.

    BUILD picks medoids greedily; SWAP then takes the best improving
    (medoid, non-medoid) exchange until none improves the cost.  ``seed``
    fixes the order in which candidates are scanned, which only matters for
    exact ties.
    """
    values = matrix.values if isinstance(matrix, IncidenceMatrix) else np.asarray(matrix)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be between 1 and n={n}")
    D = 1.0 - values
    order = np.random.default_rng(seed).permutation(n)

    medoids = [int(order[np.argmin(D[order].sum(axis=1))])]
    nearest = D[:, medoids[0]].copy()
    while len(medoids) < k:
        best, best_gain = -1, -np.inf
        for c in order:
            if c in medoids:
                continue
            gain = np.maximum(nearest - D[:, c], 0).sum()
            if gain > best_gain:
                best, best_gain = int(c), gain
        medoids.append(best)
        nearest = np.minimum(nearest, D[:, best])

    cost = _pam_cost(D, medoids)
    while True:
        best_swap, best_cost = None, cost
        for mi in range(k):
            for c in order:
                if c in medoids:
                    continue
                trial = medoids.copy()
                trial[mi] = int(c)
                tc = _pam_cost(D, trial)
                if tc < best_cost - 1e-12:
                    best_swap, best_cost = trial, tc
        if best_swap is None:
            break
        medoids, cost = best_swap, best_cost

    medoids.sort()
    labels = np.argmin(D[:, medoids], axis=1) + 1
    # each medoid labels itself, even at zero-distance ties
    labels[medoids] = np.arange(1, k + 1)
    return labels


def _cluster_counts(sample: Sample, min_members: int) -> int:
    return int(np.sum(sample.sizes() >= min_members))


def select_primary_k(chain: ChainRecord, min_members: int = 5) -> int:
    """Smallest per-sample number of clusters with at least ``min_members`` members."""
    _require_samples(chain)
    return int(min(_cluster_counts(s, min_members) for s in chain.samples))


def k_histogram(chain: ChainRecord, min_members: int = 1) -> dict:
    """Frequency of each per-sample cluster count (clusters below ``min_members`` ignored)."""
    ks = [_cluster_counts(s, min_members) for s in chain.samples]
    values, freq = np.unique(ks, return_counts=True)
    return {int(v): int(f) for v, f in zip(values, freq)}


def aggregate_small_clusters(chain: ChainRecord, k_primary: int) -> ChainRecord:
    """Keep the ``k_primary`` largest clusters per sample; merge the rest.

    Kept clusters are renumbered 1..k by decreasing size (ties: lower
    original label first); every other cluster becomes label ``k_primary+1``.
    Re-aggregating an aggregated chain with the same ``k_primary`` is a no-op.
    """
    if k_primary < 1:
        raise ValueError("k_primary must be >= 1")
    if chain.k_primary is not None and chain.k_primary != k_primary:
        raise ValueError(f"chain already aggregated with k_primary={chain.k_primary}")
    residual = k_primary + 1
    out = []
    for s in chain.samples:
        a = s.assignments
        sizes = np.bincount(a, minlength=int(a.max()) + 1)[1:]
        labels = np.arange(1, sizes.size + 1)
        present = sizes > 0
        if chain.k_primary is not None:
            present &= labels != residual
        cand = labels[present]
        order = sorted(cand, key=lambda c: (-sizes[c - 1], c))
        kept = order[:k_primary]
        mapping = np.full(sizes.size + 1, residual, dtype=np.int64)
        for new, old in enumerate(kept, start=1):
            mapping[old] = new
        new_a = mapping[a]
        alphas = np.array([s.alphas[old - 1] for old in kept]).reshape(len(kept), -1)
        out.append(replace(s, assignments=new_a, alphas=alphas))
    return chain.with_samples(out, k_primary=k_primary)


def kl_divergence(p, q) -> float:
    """KL(p || q) for strictly positive probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def _freqs(alphas):
    return alphas / alphas.sum(axis=1, keepdims=True)


def match_labels(ref_freqs, freqs) -> dict:
    """Hungarian matching of components to reference components by KL cost.

    Returns ``{component_index: reference_index}`` for the matched pairs.
    """
    if len(ref_freqs) == 0 or len(freqs) == 0:
        return {}
    C = np.array([[kl_divergence(r, f) for f in freqs] for r in ref_freqs])
    rows, cols = linear_sum_assignment(C)
    return {int(c): int(r) for r, c in zip(rows, cols)}


def relabel_chain(chain: ChainRecord) -> ChainRecord:
    """Align primary labels of every sample with the maximum-likelihood sample.

    Each sample's primary components are matched to the reference's by
    minimum total KL divergence between expected-frequency vectors.  Unmatched
    components take the unused label numbers in size order.  The residual
    label is left alone.  Unused labels get NaN parameter rows.
    """
    _require_samples(chain)
    if chain.k_primary is None:
        raise ValueError("aggregate_small_clusters must run before relabel_chain")
    residual = chain.k_primary + 1
    ref = chain.samples[chain.max_likelihood_index()]
    ref_freqs = _freqs(ref.alphas)
    out = []
    for s in chain.samples:
        n_prim = s.alphas.shape[0]
        freqs = _freqs(s.alphas)
        match = match_labels(ref_freqs, freqs)
        mapping = np.zeros(residual + 1, dtype=np.int64)
        mapping[residual] = residual
        used = {r + 1 for r in match.values()}
        width = max(n_prim, ref.alphas.shape[0])
        free = [lab for lab in range(1, width + 1) if lab not in used]
        for c in range(n_prim):
            if c in match:
                mapping[c + 1] = match[c] + 1
            else:
                mapping[c + 1] = free.pop(0)
        D = s.alphas.shape[1]
        alphas = np.full((width, D), np.nan)
        for c in range(n_prim):
            alphas[mapping[c + 1] - 1] = s.alphas[c]
        out.append(replace(s, assignments=mapping[s.assignments], alphas=alphas))
    return chain.with_samples(out)


def painting(chain: ChainRecord, data: Optional[CountTable] = None) -> PaintingMatrix:
    """Fraction of samples placing each unit-level in each CP."""
    _require_samples(chain)
    A = chain.assignment_matrix()
    S, N = A.shape
    if chain.k_primary is not None:
        n_cols = chain.k_primary + 1
        residual = n_cols
    else:
        n_cols = int(A.max())
        residual = None
    values = np.zeros((N, n_cols))
    for row in A:
        values[np.arange(N), row - 1] += 1.0
    values /= S
    if data is not None:
        if data.N != N:
            raise ValueError("data and chain have different unit counts")
        keys = tuple(u.key for u in data.units)
        weights = np.asarray(data.totals, dtype=float)
    else:
        keys = chain.unit_keys or tuple(("", None, None, i) for i in range(N))
        weights = np.asarray(chain.unit_totals or [1] * N, dtype=float)
    return PaintingMatrix(keys, tuple(range(1, n_cols + 1)), values, weights, residual)


def single_linkage(points) -> np.ndarray:
    """Single-linkage merge tree over Euclidean distances (scipy linkage format)."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least two points to cluster")
    return linkage(X, method="single", metric="euclidean")


def cluster_components(params: Sequence[ComponentParams]) -> np.ndarray:
    """Single-linkage tree of components by their expected decoration frequencies.

    Rows are ``(left, right, height, size)``; ``n - 1`` merges for ``n`` components.
    """
    params = list(params)
    if len(params) < 2:
        raise ValueError("need at least two components")
    return single_linkage(np.array([expected_frequencies(p) for p in params]))
