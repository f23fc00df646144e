"""Command-line interface: ``culturepaint <subcommand> ...``.

Subcommands
    filter    drop rare decoration types and small sites from a count CSV
    fit       run MCMC chains on a count CSV, one JSON file per chain
    paint     chain files to a painting CSV, SVG paintings and report figures
    diagnose  ESS / Geweke / autocorrelation report and trace plot
    simulate  run a simulation grid and write replicate and summary CSVs
    render    SVG of a raw table, a painting, or a painting with RCDs
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .io import (
    GRANULARITIES,
    SAMPLER_KEYS,
    SIMULATION_KEYS,
    InputError,
    aggregate,
    filter_dataset,
    load_counts,
    load_rcd,
    merge_chains,
    parse_config,
    read_chain,
    read_painting,
    sampler_config_from,
    write_chain,
    write_counts,
    write_painting,
)

log = logging.getLogger("culturepaint")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _table(path, granularity):
    records = load_counts(path)
    table = aggregate(records, granularity).drop_empty()
    if table.N == 0:
        raise InputError(f"{path}: no non-empty unit-levels")
    return table


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


# ---------------------------------------------------------------- subcommands

def cmd_filter(args) -> int:
    records = load_counts(args.data)
    kept, report = filter_dataset(records, args.min_type_total, args.min_site_total)
    write_counts(kept, _out_file(args.out))
    if args.report:
        _write_json(report, _out_file(args.report))
    frac = report["retained_fraction"]
    print(f"kept {report['count_after']} of {report['count_before']} sherds"
          f" ({'n/a' if frac is None else f'{100 * frac:.1f}%'}); "
          f"types {report['types_before']} -> {report['types_after']}, "
          f"sites {report['sites_before']} -> {report['sites_after']}")
    return 0


def cmd_fit(args) -> int:
    from .sampler import run_chains

    table = _table(args.data, args.granularity)
    values = parse_config(args.config, SAMPLER_KEYS) if args.config else {}
    config = sampler_config_from(values, seed=args.seed, iterations=args.iterations,
                                 thin=args.thin)
    if config.n_kept == 0:
        raise InputError("configuration stores no samples; raise iterations or lower thin")
    out = _out_dir(args.out_dir)
    chains = run_chains(table, config, args.chains, workers=args.workers)
    for c in chains:
        path = out / f"chain_{c.chain_index}.json"
        write_chain(c, path)
        print(f"{path}: {len(c)} samples, K in [{min(c.n_clusters())}, {max(c.n_clusters())}]")
    return 0


def _load_chains(paths):
    chains = [read_chain(p) for p in paths]
    return chains, merge_chains(chains)


def _component_means(rel):
    """Posterior mean expected frequencies per primary label of a relabeled chain."""
    k = rel.k_primary
    D = rel.samples[0].alphas.shape[1]
    acc = np.zeros((k, D))
    n = np.zeros(k)
    for s in rel.samples:
        for j in range(min(k, s.alphas.shape[0])):
            a = s.alphas[j]
            if np.all(np.isfinite(a)):
                acc[j] += a / a.sum()
                n[j] += 1
    keep = n > 0
    return np.flatnonzero(keep) + 1, acc[keep] / n[keep, None]


def cmd_paint(args) -> int:
    from . import figures
    from .postprocess import (
        aggregate_small_clusters,
        cluster_incidence,
        incidence_matrix,
        k_histogram,
        painting,
        relabel_chain,
        select_primary_k,
        single_linkage,
    )
    from .render import render_painting, render_raw

    _, pooled = _load_chains(args.chains)
    if len(pooled) == 0:
        raise InputError("chain files contain no samples")
    table = None
    if args.data:
        table = _table(args.data, args.granularity)
        if table.fingerprint != pooled.data_fingerprint:
            raise InputError("--data does not match the data the chains were fitted to")
    k = args.k if args.k is not None else select_primary_k(pooled, args.min_members)
    if k < 1:
        raise InputError(f"no sample has a cluster with at least {args.min_members} members; pass --k")
    rel = relabel_chain(aggregate_small_clusters(pooled, k))
    p = painting(rel, table)
    out = _out_dir(args.out_dir)
    write_painting(p, out / "painting.csv")
    render_painting(p, True, out / "painting.svg")
    render_painting(p, False, out / "painting_unshaded.svg")
    if table is not None:
        render_raw(table, out / "raw.svg")

    inc = incidence_matrix(pooled)
    labels = cluster_incidence(inc, min(k, inc.n), seed=args.seed)
    figures.incidence_plot(inc.values, labels, out / "incidence.svg")
    hist = k_histogram(pooled, args.min_members)
    figures.k_histogram_plot(hist, out / "k_histogram.svg",
                             title=f"clusters with >= {args.min_members} members")
    comp_labels, freqs = _component_means(rel)
    if freqs.shape[0] >= 2:
        names = [f"C{lab}" for lab in comp_labels]
        dec = list(table.decoration_labels) if table is not None else [
            f"d{j + 1}" for j in range(freqs.shape[1])]
        figures.component_plot(single_linkage(freqs), freqs, names, dec, out / "components.svg")
    summary = {
        "k_primary": k,
        "min_members": args.min_members,
        "n_samples": len(pooled),
        "k_histogram": {str(a): b for a, b in hist.items()},
        "medoid_labels": labels.tolist(),
        "component_labels": comp_labels.tolist(),
        "component_frequencies": freqs.tolist(),
    }
    _write_json(summary, out / "paint_summary.json")
    print(f"k_primary={k}; painting of {p.n_rows} unit-levels written to {out}")
    return 0


def _format_report(report) -> str:
    lines = []
    for r in report["chains"]:
        ess = "n/a" if r["ess"] is None else f"{r['ess']:.1f}"
        z = "n/a" if r["geweke_z"] is None else f"{r['geweke_z']:.3f}"
        acs = ", ".join(f"lag {k}: {'n/a' if v is None else f'{v:.3f}'}"
                        for k, v in r["autocorrelation"].items())
        lines.append(f"{r['file']}: n={r['n_samples']} ESS={ess} Geweke Z={z} ({acs})")
    for c in report.get("comparisons", []):
        lines.append(
            f"chains {c['chain_a']} vs {c['chain_b']}: mean |incidence diff| = "
            f"{c['mean_abs_incidence_diff']:.4f}, modal K {c['modal_k_a']} / {c['modal_k_b']}")
    return "\n".join(lines)


def cmd_diagnose(args) -> int:
    from . import figures
    from .diagnostics import chain_report, compare_runs

    chains, _ = _load_chains(args.chains)
    lags = tuple(int(x) for x in args.lags.split(","))
    reports = []
    for path, c in zip(args.chains, chains):
        r = chain_report(c, lags)
        r["file"] = str(path)
        r["chain_index"] = c.chain_index
        reports.append(r)
    report = {"chains": reports}
    if len(chains) >= 2:
        report["comparisons"] = compare_runs(chains, args.min_members)
    for r in reports:
        for key in ("ess", "geweke_z", "mean_log_likelihood"):
            r[key] = _finite(r.get(key))
    out = _out_dir(args.out_dir)
    _write_json(report, out / "diagnostics.json")
    with open(out / "diagnostics.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_format_report(report) + "\n")
    figures.trace_plot([c.log_likelihoods() for c in chains], out / "trace.svg")
    print(_format_report(report))
    return 0


def _grid_from(values):
    """Cartesian product over list-valued SimulationConfig keys."""
    from .simulation import SimulationConfig

    names = [f.name for f in fields(SimulationConfig)]
    axes = {}
    for k in names:
        if k in values:
            v = values[k]
            axes[k] = v if isinstance(v, list) else [v]
    keys = list(axes)
    grid = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        try:
            grid.append(SimulationConfig(**dict(zip(keys, combo))))
        except (TypeError, ValueError) as e:
            raise InputError(f"invalid simulation config: {e}") from None
    return grid


def cmd_simulate(args) -> int:
    from . import figures
    from .simulation import STUDY_FIELDS, SUMMARY_FIELDS, run_study, write_study_csv

    values = parse_config(args.config, {**SAMPLER_KEYS, **SIMULATION_KEYS})
    grid = _grid_from(values)
    reps = args.reps if args.reps is not None else values.get("reps", 1)
    if isinstance(reps, list):
        raise InputError("'reps' takes a single value")
    sampler_values = {k: v for k, v in values.items() if k in SAMPLER_KEYS}
    sampler = sampler_config_from(sampler_values, iterations=args.iterations, thin=args.thin,
                                  seed=args.seed)
    if args.seed is not None:
        grid = [replace(g, seed=args.seed) for g in grid]
    out = _out_dir(args.out_dir)
    plan = [{"cell": i, "D": g.D, "counts_per_unit": g.counts_per_unit, "rho": g.rho,
             "f": g.f, "n_cps": g.n_cps, "reps": reps} for i, g in enumerate(grid)]
    write_study_csv(plan, out / "plan.csv",
                    ("cell", "D", "counts_per_unit", "rho", "f", "n_cps", "reps"))
    print(f"{len(grid)} cells x {reps} replicates")
    if args.plan_only:
        return 0

    def progress(row):
        log.info("cell %d rep %d: modal K %d (true %d), corr %.3f", row["cell"], row["replicate"],
                 row["modal_k"], row["true_k"], row["correlation"])

    rows, summary = run_study(grid, reps, sampler, progress=progress)
    write_study_csv(rows, out / "study.csv", STUDY_FIELDS)
    write_study_csv(summary, out / "summary.csv", SUMMARY_FIELDS)
    figures.study_plot(summary, out / "study.svg")
    for s in summary:
        print(f"cell {s['cell']}: D={s['D']} n={s['counts_per_unit']} rho={s['rho']} f={s['f']} "
              f"corr={s['correlation_mean']:.3f} modal K={s['modal_k_mean']:.2f} "
              f"(true {s['true_k_mean']:.2f})")
    return 0


def cmd_render(args) -> int:
    from .render import render_painting, render_raw, render_rcd_overlay

    _out_file(args.out)
    if args.kind == "raw":
        if not args.data:
            raise InputError("--kind raw needs --data")
        render_raw(_table(args.data, args.granularity), args.out)
    elif args.kind == "painting":
        if not args.painting:
            raise InputError("--kind painting needs --painting")
        render_painting(read_painting(args.painting), not args.no_shade, args.out)
    else:
        if not (args.painting and args.data and args.rcd):
            raise InputError("--kind rcd needs --painting, --data and --rcd")
        render_rcd_overlay(read_painting(args.painting), _table(args.data, args.granularity),
                           load_rcd(args.rcd), args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="culturepaint", description="Cultural-period inference from stratified counts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("filter", help="drop rare types, then small sites")
    f.add_argument("--data", required=True, help="count CSV")
    f.add_argument("--out", required=True, help="filtered count CSV")
    f.add_argument("--min-type-total", type=int, default=2000)
    f.add_argument("--min-site-total", type=int, default=100)
    f.add_argument("--report", help="write the retention report as JSON")
    f.set_defaults(func=cmd_filter)

    fit = sub.add_parser("fit", help="run MCMC chains")
    fit.add_argument("--data", required=True, help="count CSV")
    fit.add_argument("--granularity", choices=GRANULARITIES, default="eu")
    fit.add_argument("--config", help="sampler config file (key = value)")
    fit.add_argument("--seed", type=int, help="overrides the config seed")
    fit.add_argument("--iterations", type=int, help="overrides the config")
    fit.add_argument("--thin", type=int, help="overrides the config")
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--workers", type=int,
                     help="parallel workers (default: one per chain, or $CULTUREPAINT_WORKERS)")
    fit.add_argument("--out-dir", required=True)
    fit.set_defaults(func=cmd_fit)

    pa = sub.add_parser("paint", help="post-process chains into a culture painting")
    pa.add_argument("--chains", nargs="+", required=True, help="chain JSON files (pooled)")
    pa.add_argument("--data", help="count CSV the chains were fitted to (adds raw.svg)")
    pa.add_argument("--granularity", choices=GRANULARITIES, default="eu")
    pa.add_argument("--k", type=int, help="number of primary CPs (default: minimum rule)")
    pa.add_argument("--min-members", type=int, default=5)
    pa.add_argument("--seed", type=int, default=0, help="k-medoids scan order")
    pa.add_argument("--out-dir", required=True)
    pa.set_defaults(func=cmd_paint)

    d = sub.add_parser("diagnose", help="convergence diagnostics")
    d.add_argument("--chains", nargs="+", required=True)
    d.add_argument("--lags", default="1,5,10")
    d.add_argument("--min-members", type=int, default=5)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("simulate", help="simulation study over a config grid")
    s.add_argument("--config", required=True, help="grid file; comma lists span the grid")
    s.add_argument("--reps", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--plan-only", action="store_true", help="write plan.csv and stop")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("render", help="render an SVG")
    r.add_argument("--kind", choices=("raw", "painting", "rcd"), required=True)
    r.add_argument("--data", help="count CSV")
    r.add_argument("--granularity", choices=GRANULARITIES, default="eu")
    r.add_argument("--painting", help="painting CSV")
    r.add_argument("--rcd", help="RCD CSV (eu,depth_cm,age_bp,age_sd)")
    r.add_argument("--no-shade", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def data_path(name: str) -> str:
    """Path of a bundled data file (fixtures and example configs)."""
    return os.path.join(os.path.dirname(__file__), "data", name)
