"""Files in and out: count CSVs, filtering, aggregation, configs, chains, paintings.

Count CSV (long format, UTF-8)::

    site,eu,ru,level,decoration,count

``ru`` may be empty.  RCD CSV::

    eu,depth_cm,age_bp,age_sd
"""

from __future__ import annotations

import csv
import json
import logging
import re
import warnings
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import CountTable, UnitLevel
from .sampler import ChainRecord, Sample, SamplerConfig

log = logging.getLogger(__name__)

COUNT_COLUMNS = ("site", "eu", "ru", "level", "decoration", "count")
RCD_COLUMNS = ("eu", "depth_cm", "age_bp", "age_sd")
GRANULARITIES = ("site", "eu", "ru")
CHAIN_FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class RawSherdRecord:
    site: str
    eu: str
    ru: Optional[str]
    level: int
    decoration: str
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.level < 0:
            raise ValueError("level must be >= 0")

    @property
    def key(self):
        return (self.site, self.eu, self.ru, self.level, self.decoration)


@dataclass(frozen=True)
class RcdRow:
    eu: str
    depth_cm: float
    age_bp: float
    age_sd: float

    def __post_init__(self):
        if not self.depth_cm >= 0:
            raise ValueError("depth_cm must be >= 0")
        if not self.age_bp > 0:
            raise ValueError("age_bp must be > 0")
        if not self.age_sd > 0:
            raise ValueError("age_sd must be > 0")


def _parse_int(text, line, col, minimum):
    if not re.fullmatch(r"[+-]?\d+", text.strip()):
        raise InputError(f"line {line}, column '{col}': expected an integer, got {text!r}")
    v = int(text)
    if v < minimum:
        raise InputError(f"line {line}, column '{col}': must be >= {minimum}, got {v}")
    return v


def _parse_float(text, line, col):
    try:
        return float(text)
    except ValueError:
        raise InputError(f"line {line}, column '{col}': expected a number, got {text!r}") from None


def _reader(path, required):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise InputError(f"{path}: empty file, expected header {','.join(required)}")
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
    return fh, reader, {c: header.index(c) for c in required}


def load_counts(path) -> list:
    """Parse a long-format count CSV into :class:`RawSherdRecord` objects."""
    fh, reader, idx = _reader(path, COUNT_COLUMNS)
    out, seen = [], {}
    with fh:
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(idx):
                raise InputError(f"line {line}: expected {len(idx)} fields, got {len(row)}")
            get = {c: row[i].strip() for c, i in idx.items()}
            for c in ("site", "eu", "decoration"):
                if not get[c]:
                    raise InputError(f"line {line}, column '{c}': empty value")
            rec = RawSherdRecord(
                site=get["site"], eu=get["eu"], ru=get["ru"] or None,
                level=_parse_int(get["level"], line, "level", 0),
                decoration=get["decoration"],
                count=_parse_int(get["count"], line, "count", 1),
            )
            if rec.key in seen:
                raise InputError(f"line {line}: duplicate key {rec.key} (first on line {seen[rec.key]})")
            seen[rec.key] = line
            out.append(rec)
    return out


def write_counts(records: Iterable[RawSherdRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_COLUMNS)
        for r in records:
            w.writerow([r.site, r.eu, r.ru or "", r.level, r.decoration, r.count])


def load_rcd(path) -> list:
    fh, reader, idx = _reader(path, RCD_COLUMNS)
    out = []
    with fh:
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            get = {c: row[i].strip() for c, i in idx.items()}
            try:
                out.append(RcdRow(get["eu"], _parse_float(get["depth_cm"], line, "depth_cm"),
                                  _parse_float(get["age_bp"], line, "age_bp"),
                                  _parse_float(get["age_sd"], line, "age_sd")))
            except ValueError as e:
                if isinstance(e, InputError):
                    raise
                raise InputError(f"line {line}: {e}") from None
    return out


def filter_dataset(records: Sequence[RawSherdRecord], min_type_total: int = 2000,
                   min_site_total: int = 100):
    """Drop rare decoration types, then small sites.

    Returns ``(kept_records, report)``; the report gives totals before and
    after and the retained fraction (``None`` for empty input).
    """
    records = list(records)
    before = sum(r.count for r in records)
    type_tot: dict = {}
    for r in records:
        type_tot[r.decoration] = type_tot.get(r.decoration, 0) + r.count
    keep_types = {t for t, n in type_tot.items() if n >= min_type_total}
    step1 = [r for r in records if r.decoration in keep_types]
    site_tot: dict = {}
    for r in step1:
        site_tot[r.site] = site_tot.get(r.site, 0) + r.count
    keep_sites = {s for s, n in site_tot.items() if n >= min_site_total}
    kept = [r for r in step1 if r.site in keep_sites]
    after = sum(r.count for r in kept)
    report = {
        "records_before": len(records),
        "records_after": len(kept),
        "count_before": before,
        "count_after": after,
        "retained_fraction": after / before if before else None,
        "types_before": len(type_tot),
        "types_after": len(keep_types & {r.decoration for r in kept}),
        "sites_before": len({r.site for r in records}),
        "sites_after": len(keep_sites),
    }
    return kept, report


def natural_key(value):
    """Sort key placing ``"2"`` before ``"10"``; ``None`` sorts first."""
    if value is None:
        return ((0, ""),)
    parts = re.split(r"(\d+)", str(value))
    return tuple((1, int(p)) if p.isdigit() else (2, p) for p in parts if p != "")


def _unit_sort_key(key):
    site, eu, ru, level = key
    return (natural_key(site), natural_key(eu), natural_key(ru), level)


def aggregate(records: Sequence[RawSherdRecord], granularity: str = "eu") -> CountTable:
    """Sum counts per (unit, level) at site, EU or RU granularity.

    Decoration columns are in natural order of their labels; all-zero
    unit-levels are dropped.  At RU granularity, records without an RU
    identifier are treated as one RU per EU.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    records = list(records)
    labels = sorted({r.decoration for r in records}, key=natural_key)
    col = {d: j for j, d in enumerate(labels)}
    if granularity == "ru":
        missing = sum(1 for r in records if r.ru is None)
        if missing:
            warnings.warn(f"{missing} record(s) lack an RU identifier; each EU is treated as a single RU",
                          stacklevel=2)
    acc: dict = {}
    for r in records:
        if granularity == "site":
            key = (r.site, None, None, r.level)
        elif granularity == "eu":
            key = (r.site, r.eu, None, r.level)
        else:
            key = (r.site, r.eu, r.ru if r.ru is not None else r.eu, r.level)
        row = acc.setdefault(key, [0] * len(labels))
        row[col[r.decoration]] += r.count
    units = tuple(
        UnitLevel(k[0], k[1], k[2], k[3], tuple(v))
        for k, v in sorted(acc.items(), key=lambda kv: _unit_sort_key(kv[0]))
        if sum(v) > 0
    )
    return CountTable(units, tuple(labels))


def table_to_records(table: CountTable) -> list:
    out = []
    for u in table.units:
        for d, c in zip(table.decoration_labels, u.counts):
            if c:
                out.append(RawSherdRecord(u.site, u.eu if u.eu is not None else u.site,
                                          u.ru, u.level, d, int(c)))
    return out


# ---------------------------------------------------------------- config files

def _convert(value: str, kind):
    value = value.strip()
    if kind is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return kind(value)


SAMPLER_KEYS = {
    "gamma": float, "m": int, "iterations": int, "burn_in_fraction": float, "thin": int,
    "grid_points": int, "grid_range": "range", "seed": int, "exp_mean": float,
    "precision_update": str,
}
SIMULATION_KEYS = {
    "n_cps": int, "n_sites": int, "levels_per_site": int, "D": int,
    "counts_per_unit": int, "rho": float, "f": float, "reps": int,
}


def parse_config(path, allowed=None) -> dict:
    """Parse a flat ``key = value`` config file (see :func:`parse_config_text`)."""
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), allowed, name=str(path))


def parse_config_text(text: str, allowed=None, name: str = "<config>") -> dict:
    """Parse ``key = value`` lines.

    Blank lines and ``#`` comments are ignored.  Values containing commas are
    lists.  Unknown keys raise :class:`InputError`.
    """
    if allowed is None:
        allowed = {**SAMPLER_KEYS, **SIMULATION_KEYS}
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{name}:{line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise InputError(f"{name}:{line_no}: unknown config key '{key}'")
        kind = allowed[key]
        try:
            if kind == "range":
                parts = [float(p) for p in value.split(",")]
                if len(parts) != 2:
                    raise ValueError("grid_range needs two values")
                out[key] = tuple(parts)
            elif "," in value:
                out[key] = [_convert(p, kind) for p in value.split(",")]
            else:
                out[key] = _convert(value, kind)
        except ValueError as e:
            raise InputError(f"{name}:{line_no}: bad value for '{key}': {e}") from None
    return out


def sampler_config_from(values: dict, **overrides) -> SamplerConfig:
    kw = {k: v for k, v in values.items() if k in SAMPLER_KEYS}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    for k, v in kw.items():
        if isinstance(v, list):
            raise InputError(f"'{k}' takes a single value")
    try:
        return SamplerConfig(**kw)
    except (TypeError, ValueError) as e:
        raise InputError(f"invalid sampler config: {e}") from None


def config_to_dict(config: SamplerConfig) -> dict:
    d = {f.name: getattr(config, f.name) for f in fields(config)}
    d["grid_range"] = list(config.grid_range)
    return d


# ---------------------------------------------------------------- chains

def chain_to_json(chain: ChainRecord) -> str:
    doc = {
        "format_version": CHAIN_FORMAT_VERSION,
        "chain_index": chain.chain_index,
        "data_fingerprint": chain.data_fingerprint,
        "config": config_to_dict(chain.config),
        "k_primary": chain.k_primary,
        "units": [list(k) + [t] for k, t in zip(chain.unit_keys, chain.unit_totals)],
        "samples": [
            {
                "iteration": s.iteration,
                "log_likelihood": s.log_likelihood,
                "n_clusters": s.n_clusters,
                "assignments": s.assignments.tolist(),
                "alphas": [[None if not np.isfinite(x) else x for x in row] for row in s.alphas.tolist()],
            }
            for s in chain.samples
        ],
    }
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def write_chain(chain: ChainRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(chain_to_json(chain))


def read_chain(path) -> ChainRecord:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not a chain file ({e})") from None
    version = doc.get("format_version")
    if version != CHAIN_FORMAT_VERSION:
        raise InputError(f"{path}: unsupported chain format_version {version!r}")
    cfg = dict(doc["config"])
    cfg["grid_range"] = tuple(cfg["grid_range"])
    samples = [
        Sample(s["iteration"], s["assignments"],
               np.array([[np.nan if x is None else x for x in row] for row in s["alphas"]], dtype=float),
               s["log_likelihood"], s["n_clusters"])
        for s in doc["samples"]
    ]
    units = doc.get("units", [])
    return ChainRecord(
        tuple(samples), SamplerConfig(**cfg), doc["data_fingerprint"],
        unit_keys=tuple(tuple(u[:4]) for u in units),
        unit_totals=tuple(u[4] for u in units),
        chain_index=doc.get("chain_index", 0),
        k_primary=doc.get("k_primary"),
    )


def merge_chains(chains: Sequence[ChainRecord]) -> ChainRecord:
    """Pool samples of chains fitted to the same data."""
    chains = list(chains)
    if not chains:
        raise ValueError("no chains")
    fp = chains[0].data_fingerprint
    if any(c.data_fingerprint != fp for c in chains):
        raise InputError("chains were fitted to different data")
    samples = [s for c in chains for s in c.samples]
    return chains[0].with_samples(samples)


# ---------------------------------------------------------------- paintings

def write_painting(p, path) -> None:
    """CSV: unit key columns, total, then one column per CP label.

    The residual column, if any, is headed ``C<label>*``.
    """
    cols = [f"C{lab}*" if lab == p.residual else f"C{lab}" for lab in p.labels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "eu", "ru", "level", "total", *cols])
        for key, wt, row in zip(p.keys, p.weights, p.values):
            site, eu, ru, level = key
            w.writerow([site, eu or "", ru or "", level, int(wt), *(repr(float(x)) for x in row)])


def read_painting(path):
    from .postprocess import PaintingMatrix

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["site", "eu", "ru", "level", "total"]:
            raise InputError(f"{path}: not a painting CSV")
        labels = []
        residual = None
        for h in header[5:]:
            m = re.fullmatch(r"C(\d+)(\*?)", h)
            if not m:
                raise InputError(f"{path}: bad CP column '{h}'")
            labels.append(int(m.group(1)))
            if m.group(2):
                residual = labels[-1]
        keys, weights, rows = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            keys.append((row[0], row[1] or None, row[2] or None, int(row[3])))
            weights.append(float(row[4]))
            rows.append([float(x) for x in row[5:]])
    return PaintingMatrix(tuple(keys), tuple(labels), np.array(rows, dtype=float),
                          np.array(weights), residual)
