"""Acceptance criteria, one group of tests per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` or ``python3 tests/test_acceptance.py``.
A summary line per criterion is printed at the end of the session.
"""

import json
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from culturepaint.cli import data_path, main
from culturepaint.diagnostics import effective_sample_size, geweke_z
from culturepaint.io import read_painting
from culturepaint.model import ComponentParams, CountTable, dm_log_likelihood, expected_frequencies
from culturepaint.postprocess import (
    aggregate_small_clusters,
    cluster_incidence,
    incidence_matrix,
    painting,
    relabel_chain,
)
from culturepaint.sampler import (
    ChainRecord,
    ChainState,
    Sample,
    SamplerConfig,
    chain_rng,
    crp_expected_clusters,
    run_chain,
    update_component_params,
)
from culturepaint.simulation import SimulationConfig, run_study

from oracles import (
    ar1,
    brute_force_medoids,
    dm_probability_exact,
    log_fraction,
    partition_canonical,
    quadrature_component_posterior,
)


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1)
def test_likelihood_matches_rational_arithmetic():
    rng = np.random.default_rng(20240611)
    cases = []
    for _ in range(1000):
        D = int(rng.integers(1, 6))
        total = int(rng.integers(0, 21))
        counts = rng.multinomial(total, np.ones(D) / D)
        alpha = [Fraction(int(rng.integers(1, 60)), int(rng.integers(1, 12))) for _ in range(D)]
        cases.append((counts, alpha))
    t0 = time.perf_counter()
    params = [ComponentParams([float(a) for a in al]) for _, al in cases]
    got = [dm_log_likelihood(c, pr) for (c, _), pr in zip(cases, params)]
    elapsed = time.perf_counter() - t0
    for (c, al), g in zip(cases, got):
        want = log_fraction(dm_probability_exact(c, al))
        assert g == pytest.approx(want, rel=1e-10, abs=1e-300)
    assert elapsed < 1.0


@pytest.mark.criterion(1)
def test_likelihood_one_twelfth():
    assert np.exp(dm_log_likelihood([2, 1], ComponentParams([1.0, 1.0]))) == pytest.approx(1 / 12, rel=1e-12)


# ---------------------------------------------------------------- 2

@pytest.mark.criterion(2)
def test_prior_recovery_expected_clusters():
    table = CountTable.from_array(np.zeros((100, 3), dtype=int))
    # 30% burn-in leaves 20,000 kept sweeps at thin 1
    cfg = SamplerConfig(iterations=28572, thin=1, seed=0)
    assert cfg.n_kept >= 20_000
    t0 = time.perf_counter()
    chain = run_chain(table, cfg)
    elapsed = time.perf_counter() - t0
    mean_k = float(np.mean(chain.n_clusters()))
    target = crp_expected_clusters(100, 1.0)
    print(f"\nprior recovery: mean K {mean_k:.3f}, target {target:.3f}, {elapsed:.1f}s")
    assert target == pytest.approx(5.187, abs=5e-4)
    assert abs(mean_k - 5.187) <= 0.15
    assert elapsed < 120


# ---------------------------------------------------------------- 3

@pytest.mark.criterion(3)
def test_component_update_matches_quadrature():
    s = (40, 10)
    table = CountTable.from_array([s])
    cfg = SamplerConfig()
    rng = chain_rng(0)
    st = ChainState(np.array([1]), (ComponentParams([1.0, 1.0]),), np.array([1]))
    t0 = time.perf_counter()
    q1 = np.empty(20_000)
    for i in range(q1.size):
        st = update_component_params(st, table, cfg, rng)
        q1[i] = expected_frequencies(st.components[0])[0]
    elapsed = time.perf_counter() - t0
    want, _ = quadrature_component_posterior(s)
    print(f"\ncomponent update: mean q1 {q1.mean():.4f}, quadrature {want:.4f}")
    assert abs(q1.mean() - want) <= 0.03
    assert elapsed < 60


# ---------------------------------------------------------------- 4 and 5

STUDY_SAMPLER = SamplerConfig(iterations=20_000, thin=100, seed=0)
REPS = 10


def _study(**cell):
    t0 = time.perf_counter()
    rows, summary = run_study([SimulationConfig(seed=0, **cell)], REPS, STUDY_SAMPLER)
    elapsed = time.perf_counter() - t0
    for r in rows:
        print(f"  rep {r['replicate']}: modal K {r['modal_k']} (true {r['true_k']}), "
              f"corr {r['correlation']:.3f}, mismatches {r['mismatches']}")
    return rows, summary[0], elapsed


@pytest.fixture(scope="module")
def fig_regime():
    print("\nD=15, counts 1000, rho 0.1, f 0")
    return _study(D=15, counts_per_unit=1000, rho=0.1, f=0.0)


@pytest.fixture(scope="module")
def degraded_regime():
    print("\nD=3, counts 50, rho 0.1, f 0")
    return _study(D=3, counts_per_unit=50, rho=0.1, f=0.0)


@pytest.mark.criterion(4)
def test_simulation_recovers_five_cps(fig_regime):
    rows, summary, elapsed = fig_regime
    good = sum(r["modal_k"] == 5 and r["correlation"] >= 0.9 for r in rows)
    truth_relative = sum(r["modal_k"] == r["true_k"] and r["correlation"] >= 0.9 for r in rows)
    print(f"modal K = 5 and corr >= 0.9: {good}/{REPS}; "
          f"modal K = generated K and corr >= 0.9: {truth_relative}/{REPS}")
    assert good >= 8
    assert elapsed < 30 * 60


@pytest.mark.criterion(4)
def test_simulation_degrades_with_little_data(fig_regime, degraded_regime):
    _, good, t1 = fig_regime
    _, poor, t2 = degraded_regime
    print(f"mean correlation {good['correlation_mean']:.3f} vs {poor['correlation_mean']:.3f}")
    assert poor["correlation_mean"] < good["correlation_mean"]
    assert t1 + t2 < 30 * 60


@pytest.mark.criterion(5)
def test_light_mixing_keeps_five_cps():
    print("\nD=15, counts 1000, rho 0.1, f 0.1")
    rows, _, _ = _study(D=15, counts_per_unit=1000, rho=0.1, f=0.1)
    hits = sum(r["modal_k"] == 5 for r in rows)
    print(f"modal K = 5: {hits}/{REPS}")
    assert hits >= 7


@pytest.mark.criterion(5)
@pytest.mark.xfail(strict=False, reason="heavy mixing and switching may defeat recovery")
def test_heavy_mixing_cell():
    print("\nD=15, counts 1000, rho 0.5, f 0.5")
    rows, _, _ = _study(D=15, counts_per_unit=1000, rho=0.5, f=0.5)
    assert sum(r["modal_k"] == 5 for r in rows) >= 7


# ---------------------------------------------------------------- 6

@pytest.mark.criterion(6)
def test_ess_ar1():
    t0 = time.perf_counter()
    x = ar1(0.9, 100_000, np.random.default_rng(1))
    assert effective_sample_size(x) == pytest.approx(x.size * 0.1 / 1.9, rel=0.15)
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(6)
def test_geweke_stationary_and_shift():
    rng = np.random.default_rng(2)
    z = np.array([geweke_z(rng.standard_normal(10_000)) for _ in range(200)])
    assert np.mean(np.abs(z) < 3) >= 0.99
    x = rng.standard_normal(10_000)
    x[5000:] += 10
    assert abs(geweke_z(x)) > 5


# ---------------------------------------------------------------- 7

def _chain(assigns, alphas, lls):
    N = len(assigns[0])
    samples = tuple(Sample(i + 1, np.asarray(a), np.asarray(al, dtype=float), ll, int(max(a)))
                    for i, (a, al, ll) in enumerate(zip(assigns, alphas, lls)))
    return ChainRecord(samples, SamplerConfig(), "fp",
                       unit_keys=tuple(("S", "1", None, j) for j in range(N)),
                       unit_totals=tuple([10] * N))


@pytest.mark.criterion(7)
def test_relabel_recovers_permuted_chain():
    rng = np.random.default_rng(3)
    base = np.repeat([1, 2, 3, 4], [7, 6, 5, 6])
    freqs = rng.dirichlet(np.ones(5), 4)
    assigns, alphas, lls = [], [], []
    for i in range(50):
        perm = rng.permutation(4)
        assigns.append(np.argsort(perm)[base - 1] + 1)
        alphas.append(20 * freqs[perm])
        lls.append(-float(i))
    rel = relabel_chain(aggregate_small_clusters(_chain(assigns, alphas, lls), 4))
    ref = rel.samples[0].assignments
    assert all(np.array_equal(x.assignments, ref) for x in rel.samples)
    p = painting(rel).values
    # one-hot rows reproducing the planted partition; names follow cluster size
    assert set(np.unique(p).tolist()) == {0.0, 1.0}
    assert partition_canonical(p.argmax(axis=1)) == partition_canonical(base)


@pytest.mark.criterion(7)
def test_incidence_label_permutation_invariance():
    rng = np.random.default_rng(4)
    base = [np.array(partition_canonical(rng.integers(1, 6, 30))) for _ in range(60)]
    perm = [np.argsort(rng.permutation(int(a.max())))[a - 1] + 1 for a in base]
    ones = [np.ones((int(a.max()), 2)) for a in base]
    a = incidence_matrix(_chain(base, ones, [0.0] * 60)).values
    b = incidence_matrix(_chain(perm, ones, [0.0] * 60)).values
    assert np.array_equal(a, b)


@pytest.mark.criterion(7)
def test_kmedoids_planted_blocks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lab = np.repeat([0, 1, 2], 6)
    m = np.where(lab[:, None] == lab[None, :], 0.85, 0.15)
    e = rng.uniform(-0.12, 0.12, m.shape)
    m = np.clip(m + (e + e.T) / 2, 0, 1)
    np.fill_diagonal(m, 1.0)
    got = cluster_incidence(m, 3) - 1
    _, _, bf = brute_force_medoids(1 - m, 3)
    from scipy.optimize import linear_sum_assignment

    C = np.zeros((3, 3), dtype=int)
    np.add.at(C, (got, bf), 1)
    r, c = linear_sum_assignment(-C)
    assert lab.size - C[r, c].sum() <= 1
    assert time.perf_counter() - t0 < 60


# ---------------------------------------------------------------- 8

def _cli(cwd, *args):
    return subprocess.run([sys.executable, "-m", "culturepaint", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


def _full_run(out: Path):
    # relative paths, so recorded file names match between runs
    out.mkdir()
    data = "filtered.csv"
    steps = [
        ("filter", "--data", data_path("synthetic_counts.csv"), "--out", data),
        ("fit", "--data", data, "--config", data_path("fit.cfg"), "--iterations", 800,
         "--chains", 2, "--out-dir", "fit"),
        ("paint", "--chains", "fit/chain_0.json", "fit/chain_1.json",
         "--data", data, "--out-dir", "paint"),
        ("diagnose", "--chains", "fit/chain_0.json", "fit/chain_1.json", "--out-dir", "diag"),
        ("render", "--kind", "rcd", "--data", data, "--painting", "paint/painting.csv",
         "--rcd", data_path("synthetic_rcd.csv"), "--out", "rcd.svg"),
    ]
    for step in steps:
        r = _cli(out, *step)
        assert r.returncode == 0, r.stderr


@pytest.mark.criterion(8)
def test_outputs_are_byte_identical(tmp_path):
    _full_run(tmp_path / "a")
    _full_run(tmp_path / "b")
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                     if p.suffix in (".json", ".svg"))
    assert any(p.name == "chain_0.json" for p in a_files)
    assert sum(p.suffix == ".svg" for p in a_files) >= 7
    for rel in a_files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9)
def test_end_to_end_fixture(tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "filtered.csv"
    assert main(["filter", "--data", data_path("synthetic_counts.csv"), "--out", str(data)]) == 0
    assert main(["fit", "--data", str(data), "--config", data_path("fit.cfg"), "--chains", "4",
                 "--out-dir", str(tmp_path / "fit")]) == 0
    chains = [str(tmp_path / "fit" / f"chain_{i}.json") for i in range(4)]
    assert main(["paint", "--chains", *chains, "--data", str(data),
                 "--out-dir", str(tmp_path / "paint")]) == 0
    assert main(["diagnose", "--chains", *chains, "--out-dir", str(tmp_path / "diag")]) == 0
    assert main(["render", "--kind", "rcd", "--data", str(data),
                 "--painting", str(tmp_path / "paint" / "painting.csv"),
                 "--rcd", data_path("synthetic_rcd.csv"), "--out", str(tmp_path / "rcd.svg")]) == 0
    p = read_painting(tmp_path / "paint" / "painting.csv")
    assert np.all(np.abs(p.values.sum(axis=1) - 1.0) <= 1e-9)
    summary = json.loads((tmp_path / "paint" / "paint_summary.json").read_text())
    print(f"\nend to end: k_primary {summary['k_primary']}, {p.n_rows} unit-levels")
    assert time.perf_counter() - t0 < 300


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"]))
