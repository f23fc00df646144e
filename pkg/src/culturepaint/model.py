"""Domain types and exact probability computations.

The observed data is a table of unit-levels (one depth increment of one
excavation unit) by decoration-type counts.  Each cultural period (CP) is a
Dirichlet-multinomial (DM) component with concentration vector ``alpha``.
The base measure over components is Exponential(mean) on the total
concentration times a uniform Dirichlet on the proportions.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "UnitLevel",
    "CountTable",
    "ComponentParams",
    "BaseMeasureConfig",
    "dm_log_likelihood",
    "sample_base_measure",
    "base_measure_log_density",
    "expected_frequencies",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UnitLevel:
    """Counts for one depth increment of one spatial unit."""

    site: str
    eu: Optional[str]
    ru: Optional[str]
    level: int
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative count in unit-level {self.key}")
        if int(self.level) < 0:
            raise ValueError(f"negative level in unit-level {self.key}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "level", int(self.level))

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def key(self) -> tuple:
        return (self.site, self.eu, self.ru, self.level)

    @property
    def column(self) -> tuple:
        """Spatial column the unit-level belongs to (everything but depth)."""
        return (self.site, self.eu, self.ru)


@dataclass(frozen=True)
class CountTable:
    """Unit-levels by decoration-type counts.

    Row order is meaningful: it is the scan order of the sampler and the row
    order of every derived matrix.
    """

    units: tuple
    decoration_labels: tuple

    def __post_init__(self):
        units = tuple(self.units)
        labels = tuple(str(x) for x in self.decoration_labels)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "decoration_labels", labels)
        D = len(labels)
        seen = set()
        for u in units:
            if len(u.counts) != D:
                raise ValueError(
                    f"unit-level {u.key} has {len(u.counts)} counts, expected {D}"
                )
            if u.key in seen:
                raise ValueError(f"duplicate unit-level key {u.key}")
            seen.add(u.key)

    @property
    def D(self) -> int:
        return len(self.decoration_labels)

    @property
    def N(self) -> int:
        return len(self.units)

    def __len__(self) -> int:
        return len(self.units)

    @cached_property
    def counts(self) -> np.ndarray:
        """(N, D) int64 count matrix."""
        a = np.array([u.counts for u in self.units], dtype=np.int64).reshape(self.N, self.D)
        return _readonly(a)

    @cached_property
    def totals(self) -> np.ndarray:
        return _readonly(self.counts.sum(axis=1))

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of labels, keys and counts."""
        doc = {
            "labels": list(self.decoration_labels),
            "units": [[u.site, u.eu, u.ru, u.level, list(u.counts)] for u in self.units],
        }
        raw = json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()

    def drop_empty(self) -> "CountTable":
        """Table without the all-zero unit-levels."""
        return CountTable(tuple(u for u in self.units if u.total > 0), self.decoration_labels)

    @classmethod
    def from_array(cls, counts, labels=None, site="S1", eu="1") -> "CountTable":
        """Single-column table (one site/EU, levels 0..N-1); handy for tests."""
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-D array")
        if labels is None:
            labels = tuple(f"d{d + 1}" for d in range(counts.shape[1]))
        units = tuple(
            UnitLevel(site, eu, None, j, tuple(int(c) for c in row))
            for j, row in enumerate(counts)
        )
        return cls(units, tuple(labels))


@dataclass(frozen=True)
class ComponentParams:
    """Concentration vector of one DM component."""

    alpha: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).ravel()
        if a.size == 0:
            raise ValueError("alpha must have at least one entry")
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("every alpha must be finite and > 0")
        object.__setattr__(self, "alpha", _readonly(a))

    @property
    def D(self) -> int:
        return self.alpha.size

    @property
    def alpha_bar(self) -> float:
        return math.fsum(self.alpha)

    def __repr__(self):
        return f"ComponentParams(alpha_bar={self.alpha_bar:.6g}, D={self.D})"

    def __eq__(self, other):
        if not isinstance(other, ComponentParams):
            return NotImplemented
        return np.array_equal(self.alpha, other.alpha)

    def __hash__(self):
        return hash(self.alpha.tobytes())


@dataclass(frozen=True)
class BaseMeasureConfig:
    """G0: total concentration ~ Exponential(exp_mean), proportions ~ Dirichlet(1)."""

    D: int
    exp_mean: float = 1.0

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if not self.exp_mean > 0:
            raise ValueError("exp_mean must be > 0")


def dm_log_likelihood(counts, params: ComponentParams) -> float:
    """Log DM probability of a count vector, without the multinomial coefficient.

    ``log G(A) - log G(N + A) + sum_d [log G(s_d + a_d) - log G(a_d)]``
    with A the total concentration and N the total count.  Terms are summed
    with :func:`math.fsum`, so the value does not depend on decoration order.
    """
    counts = np.asarray(counts)
    alpha = params.alpha
    if counts.shape != alpha.shape:
        raise ValueError(f"counts has shape {counts.shape}, params have D={alpha.size}")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    a_bar = params.alpha_bar
    n = int(counts.sum())
    terms = [math.lgamma(a_bar), -math.lgamma(n + a_bar)]
    for s, a in zip(counts.tolist(), alpha.tolist()):
        if s:
            terms.append(math.lgamma(s + a))
            terms.append(-math.lgamma(a))
    return math.fsum(terms)


def sample_base_measure(base: BaseMeasureConfig, rng: np.random.Generator) -> ComponentParams:
    """Draw one component from G0."""
    a_bar = rng.exponential(base.exp_mean)
    q = rng.standard_exponential(base.D)
    q /= q.sum()
    alpha = np.maximum(a_bar * q, np.finfo(float).tiny)
    return ComponentParams(alpha)


def base_measure_log_density(params: ComponentParams, base: BaseMeasureConfig) -> float:
    """Log density of (total concentration, proportions) under G0.

    The uniform Dirichlet contributes ``log Gamma(D)``.
    """
    if params.D != base.D:
        raise ValueError(f"params have D={params.D}, base measure has D={base.D}")
    a_bar = params.alpha_bar
    if not a_bar > 0:
        raise ValueError("total concentration must be > 0")
    return -math.log(base.exp_mean) - a_bar / base.exp_mean + math.lgamma(base.D)


def expected_frequencies(params: ComponentParams) -> np.ndarray:
    """Mean decoration frequencies ``alpha / alpha_bar``."""
    return params.alpha / params.alpha_bar
