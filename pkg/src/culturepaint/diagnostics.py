"""Chain-quality statistics on scalar traces (usually the stored log-likelihood)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .sampler import ChainRecord

__all__ = [
    "TraceSeries",
    "DegenerateSeriesError",
    "autocorrelation",
    "autocorrelation_function",
    "effective_sample_size",
    "spectral_density_at_zero",
    "geweke_z",
    "compare_runs",
    "chain_report",
]


class DegenerateSeriesError(ValueError):
    """Raised when a statistic is undefined because the series has no variance."""


@dataclass(frozen=True)
class TraceSeries:
    values: np.ndarray
    label: str = "log_likelihood"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("trace values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _values(series) -> np.ndarray:
    if isinstance(series, TraceSeries):
        return series.values
    return TraceSeries(series).values


def autocorrelation_function(series, max_lag=None) -> np.ndarray:
    """Biased sample autocorrelation at lags ``0..max_lag`` via FFT."""
    x = _values(series)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise DegenerateSeriesError("constant series has no autocorrelation")
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    rho = acov / acov[0]
    rho[0] = 1.0
    return rho


def autocorrelation(series, lag: int) -> float:
    """Biased sample autocorrelation at one lag."""
    x = _values(series)
    if not 0 <= lag < x.size:
        raise ValueError(f"lag must be in [0, {x.size})")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise DegenerateSeriesError("constant series has no autocorrelation")
    if lag == 0:
        return 1.0
    return float(np.dot(xc[:-lag], xc[lag:]) / denom)


def effective_sample_size(series) -> float:
    """ESS with Geyer's initial positive sequence truncation.

    Autocorrelations are summed in consecutive pairs ``rho(2t) + rho(2t+1)``
    until a pair sum is non-positive.  The result is capped at ``n``.
    """
    x = _values(series)
    n = x.size
    if n < 10:
        raise ValueError("need at least 10 values")
    rho = autocorrelation_function(x)
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / tau))


def spectral_density_at_zero(x, window: float = 0.04) -> float:
    """Long-run variance from a Daniell-smoothed periodogram.

    The periodogram ``|DFT|^2 / n`` is averaged over the lowest
    ``max(2, round(window * n))`` non-zero Fourier frequencies.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        raise ValueError("segment too short for a spectral estimate")
    xc = x - x.mean()
    I = np.abs(np.fft.rfft(xc)) ** 2 / n
    m = max(2, int(round(window * n)))
    m = min(m, I.size - 1)
    return float(I[1 : m + 1].mean())


def geweke_z(series, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Z-score comparing the mean of the first ``frac_a`` with the last ``frac_b``."""
    x = _values(series)
    n = x.size
    if not (0 < frac_a and 0 < frac_b and frac_a + frac_b <= 1):
        raise ValueError("fractions must be positive and sum to at most 1")
    na = int(math.floor(frac_a * n))
    nb = int(math.floor(frac_b * n))
    if na < 4 or nb < 4:
        raise ValueError("segments are too short")
    a = x[:na]
    b = x[n - nb:]
    va = spectral_density_at_zero(a) / na
    vb = spectral_density_at_zero(b) / nb
    if va + vb == 0.0:
        raise DegenerateSeriesError("both segments are constant")
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))


def _modal_k(chain: ChainRecord, min_members: int) -> int:
    ks = [int(np.sum(s.sizes() >= min_members)) for s in chain.samples]
    values, freq = np.unique(ks, return_counts=True)
    return int(values[np.argmax(freq)])


def compare_runs(chains: Sequence[ChainRecord], min_members: int = 5) -> list:
    """Pairwise agreement between independent chains on the same data."""
    from .postprocess import incidence_matrix, kl_divergence

    chains = list(chains)
    if len(chains) < 2:
        raise ValueError("need at least two chains")
    fp = chains[0].data_fingerprint
    if any(c.data_fingerprint != fp for c in chains):
        raise ValueError("chains were fitted to different data")
    inc = [incidence_matrix(c).values for c in chains]
    modal = [_modal_k(c, min_members) for c in chains]
    ml = []
    for c in chains:
        a = c.samples[c.max_likelihood_index()].alphas
        ml.append(a / a.sum(axis=1, keepdims=True))
    out = []
    for i, j in combinations(range(len(chains)), 2):
        C = np.array([[kl_divergence(p, q) for q in ml[j]] for p in ml[i]])
        r, c = linear_sum_assignment(C)
        out.append({
            "chain_a": i,
            "chain_b": j,
            "mean_abs_incidence_diff": float(np.abs(inc[i] - inc[j]).mean()),
            "modal_k_a": modal[i],
            "modal_k_b": modal[j],
            "modal_k_agree": modal[i] == modal[j],
            "max_matched_kl": float(C[r, c].max()) if r.size else 0.0,
        })
    return out


def chain_report(chain: ChainRecord, lags=(1, 5, 10)) -> dict:
    """Trace diagnostics of one chain's log-likelihood."""
    x = chain.log_likelihoods()
    rep = {"n_samples": int(x.size), "mean_log_likelihood": float(x.mean()) if x.size else None}
    try:
        rep["ess"] = effective_sample_size(x)
    except ValueError as e:
        rep["ess"] = None
        rep["ess_error"] = str(e)
    try:
        rep["geweke_z"] = geweke_z(x)
    except ValueError as e:
        rep["geweke_z"] = None
        rep["geweke_error"] = str(e)
    acs = {}
    for lag in lags:
        try:
            acs[str(lag)] = autocorrelation(x, lag) if lag < x.size else None
        except ValueError:
            acs[str(lag)] = None
    rep["autocorrelation"] = acs
    return rep
