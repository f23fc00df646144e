"""SVG 1.1 renderings of count tables, culture paintings and RCD overlays.

Output is plain XML built with ElementTree; coordinates are printed with two
decimals so identical inputs give identical bytes.

Shading follows the number of sherds in a unit-level: a white overlay with
opacity ``1 - min(1, log(1+N)/log(1+N_max))`` sits on every row.  Unshaded
paintings keep the overlay with opacity 0, so the two variants differ only
in their lightness attributes.
"""

from __future__ import annotations

import io
import math
import xml.etree.ElementTree as ET
from typing import Optional, Sequence

import numpy as np

from .io import InputError, natural_key

SVG_NS = "http://www.w3.org/2000/svg"

# 15 CP colours (Kelly's contrast set minus white/black/grey) and the residual.
CP_PALETTE = (
    "#f3c300", "#875692", "#f38400", "#a1caf1", "#be0032",
    "#c2b280", "#008856", "#e68fac", "#0067a5", "#f99379",
    "#604e97", "#f6a600", "#b3446c", "#dcd300", "#882d17",
)
RESIDUAL_COLOR = "#848482"
DECORATION_PALETTE = CP_PALETTE + (
    "#8db600", "#654522", "#e25822", "#2b3d26", "#1f77b4",
    "#9467bd", "#17becf", "#bcbd22", "#7f7f7f", "#ff7f0e",
)

ROW_H = 8.0
RAW_W = 120.0
PAINT_W = 40.0
MARGIN = 20.0
HEADER_H = 28.0


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _hex_to_rgb(h):
    h = h.lstrip("#")
    return np.array([int(h[i:i + 2], 16) for i in (0, 2, 4)], dtype=float)


def _rgb_to_hex(rgb):
    r, g, b = (int(round(min(255.0, max(0.0, c)))) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def lightness(total: float, max_total: float) -> float:
    """Overlay opacity for a unit-level with ``total`` sherds; 0 is darkest."""
    if max_total <= 0:
        return 0.0
    return 1.0 - min(1.0, math.log1p(total) / math.log1p(max_total))


def cp_color(label: int, residual: Optional[int] = None) -> str:
    if residual is not None and label == residual:
        return RESIDUAL_COLOR
    return CP_PALETTE[(label - 1) % len(CP_PALETTE)]


def blend(fractions, colors) -> str:
    """Colour mix weighted by membership fractions."""
    rgb = np.zeros(3)
    tot = 0.0
    for w, c in zip(fractions, colors):
        if w > 0:
            rgb += w * _hex_to_rgb(c)
            tot += w
    if tot == 0:
        return "#ffffff"
    return _rgb_to_hex(rgb / tot)


class _Doc:
    def __init__(self, title):
        self.root = ET.Element("svg", {
            "xmlns": SVG_NS, "version": "1.1",
        })
        ET.SubElement(self.root, "title").text = title
        self.width = 0.0
        self.height = 0.0

    def grow(self, x, y):
        self.width = max(self.width, x)
        self.height = max(self.height, y)

    def finish(self) -> str:
        self.root.set("width", _f(self.width + MARGIN))
        self.root.set("height", _f(self.height + MARGIN))
        self.root.set("viewBox", f"0 0 {_f(self.width + MARGIN)} {_f(self.height + MARGIN)}")
        # keep width/height/viewBox ahead of children for readability
        attrs = dict(self.root.attrib)
        self.root.attrib.clear()
        for k in ("xmlns", "version", "width", "height", "viewBox"):
            self.root.set(k, attrs[k])
        ET.indent(self.root, space=" ")
        body = ET.tostring(self.root, encoding="unicode")
        return '<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n"


def _text(parent, x, y, s, size=8, anchor="start", **extra):
    t = ET.SubElement(parent, "text", {
        "x": _f(x), "y": _f(y), "font-family": "sans-serif", "font-size": str(size),
        "text-anchor": anchor, **extra,
    })
    t.text = s
    return t


def _rect(parent, x, y, w, h, fill, **extra):
    return ET.SubElement(parent, "rect", {
        "x": _f(x), "y": _f(y), "width": _f(w), "height": _f(h), "fill": fill, **extra,
    })


def _shade(parent, x, y, w, h, light):
    return _rect(parent, x, y, w, h, "#ffffff", **{
        "class": "shade", "fill-opacity": f"{light:.4f}", "data-lightness": f"{light:.4f}",
    })


def _emit(svg: str, out) -> str:
    if out is None:
        return svg
    if hasattr(out, "write"):
        out.write(svg)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    return svg


def _column_label(col):
    site, eu, ru = col
    parts = [str(site)]
    if eu is not None:
        parts.append(f"EU {eu}")
    if ru is not None:
        parts.append(f"RU {ru}")
    return " ".join(parts)


def _col_sort_key(col):
    return tuple(natural_key(c) for c in col)


def _group_columns(keys):
    """``{column: [(row_index, level), ...]}`` in natural column order."""
    cols: dict = {}
    for i, key in enumerate(keys):
        site, eu, ru, level = key
        cols.setdefault((site, eu, ru), []).append((i, int(level)))
    return {c: cols[c] for c in sorted(cols, key=_col_sort_key)}


def _raw_rows(g, table, rows, x0, y0, max_total, width=RAW_W):
    labels = table.decoration_labels
    for i, level in rows:
        u = table.units[i]
        y = y0 + level * ROW_H
        row = ET.SubElement(g, "g", {"class": "unit-level", "data-level": str(level),
                                     "data-total": str(u.total)})
        ET.SubElement(row, "title").text = (
            f"{_column_label(u.column)} level {level}: N={u.total}")
        x = x0
        if u.total > 0:
            for d, c in enumerate(u.counts):
                if c == 0:
                    continue
                w = width * c / u.total
                _rect(row, x, y, w, ROW_H, DECORATION_PALETTE[d % len(DECORATION_PALETTE)],
                      **{"data-decoration": labels[d], "data-count": str(c)})
                x += w
        _shade(row, x0, y, width, ROW_H, lightness(u.total, max_total))


def render_raw(table, out=None) -> str:
    """Stacked decoration-frequency bars per unit-level, one column block per unit."""
    if table.N == 0:
        raise ValueError("table has no unit-levels")
    doc = _Doc("Raw decoration distribution")
    max_total = float(np.max(table.totals))
    x = MARGIN
    for col, rows in _group_columns([u.key for u in table.units]).items():
        g = ET.SubElement(doc.root, "g", {"class": "column", "data-column": _column_label(col)})
        _text(g, x, MARGIN + 10, _column_label(col))
        y0 = MARGIN + HEADER_H
        _raw_rows(g, table, rows, x, y0, max_total)
        depth = max(level for _, level in rows) + 1
        doc.grow(x + RAW_W, y0 + depth * ROW_H)
        x += RAW_W + MARGIN
    _legend(doc, [(lab, DECORATION_PALETTE[d % len(DECORATION_PALETTE)])
                  for d, lab in enumerate(table.decoration_labels)], "decoration")
    return _emit(doc.finish(), out)


def _legend(doc, entries, kind):
    y = doc.height + MARGIN
    g = ET.SubElement(doc.root, "g", {"class": "legend", "data-kind": kind})
    x = MARGIN
    for label, color in entries:
        _rect(g, x, y, 10, 10, color)
        _text(g, x + 14, y + 9, str(label))
        x += 14 + 7 * len(str(label)) + 12
    doc.grow(x, y + 10)


def _cp_legend(p):
    return [(f"C{lab} (residual)" if lab == p.residual else f"C{lab}", cp_color(lab, p.residual))
            for lab in p.labels]


def _painting_rows(g, p, rows, x0, y0, shaded, max_total):
    colors = [cp_color(lab, p.residual) for lab in p.labels]
    for i, level in rows:
        frac = p.values[i]
        y = y0 + level * ROW_H
        cell = ET.SubElement(g, "g", {"class": "cell", "data-level": str(level)})
        parts = [f"C{lab}{'*' if lab == p.residual else ''} {v:.2f}"
                 for lab, v in zip(p.labels, frac) if v > 0]
        ET.SubElement(cell, "title").text = (
            f"{_column_label(p.keys[i][:3])} level {level}: " + ", ".join(parts))
        _rect(cell, x0, y, PAINT_W, ROW_H, blend(frac, colors),
              **{"data-fractions": " ".join(f"{v:.4f}" for v in frac)})
        light = lightness(p.weights[i], max_total) if shaded else 0.0
        _shade(cell, x0, y, PAINT_W, ROW_H, light)


def render_painting(p, shaded: bool = True, out=None) -> str:
    """Culture painting: one cell per unit-level, coloured by CP membership."""
    if p.n_rows == 0:
        raise ValueError("painting has no rows")
    doc = _Doc("Culture painting")
    max_total = float(np.max(p.weights))
    x = MARGIN
    for col, rows in _group_columns(p.keys).items():
        g = ET.SubElement(doc.root, "g", {"class": "column", "data-column": _column_label(col)})
        _text(g, x, MARGIN + 10, _column_label(col), size=6)
        y0 = MARGIN + HEADER_H
        _painting_rows(g, p, rows, x, y0, shaded, max_total)
        depth = max(level for _, level in rows) + 1
        doc.grow(x + PAINT_W, y0 + depth * ROW_H)
        x += PAINT_W + MARGIN
    _legend(doc, _cp_legend(p), "cp")
    return _emit(doc.finish(), out)


def _normal_pdf(x, mu, sd):
    return math.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def _resolve_columns(rcd, columns):
    """Map each RcdRow to the painting column it belongs to."""
    out = []
    for r in rcd:
        if "/" in r.eu:
            site, eu = r.eu.split("/", 1)
            hits = [c for c in columns if str(c[0]) == site and str(c[1]) == eu]
        else:
            hits = [c for c in columns if str(c[1]) == r.eu]
        sites = {c[0] for c in hits}
        if not hits:
            raise InputError(f"RCD row refers to unknown EU '{r.eu}'")
        if len(sites) > 1:
            raise InputError(f"EU '{r.eu}' exists at several sites; write it as 'site/eu'")
        out.append(hits[0])
    return out


AXIS_H = 36.0
LANE = 6.0


def render_rcd_overlay(p, table, rcd: Sequence, out=None) -> str:
    """Painting and raw columns per EU with radiocarbon dates marked at depth.

    Each date gets a dashed marker at ``depth_cm / 10`` levels and a dotted
    leader down to a normal density curve on the panel's age axis.  Leaders
    of one panel use separate lanes so they never share a segment.
    """
    if p.n_rows == 0:
        raise ValueError("painting has no rows")
    groups = _group_columns(p.keys)
    columns = list(groups)
    targets = _resolve_columns(rcd, columns)
    by_col: dict = {c: [] for c in columns}
    for r, c in zip(rcd, targets):
        by_col[c].append(r)

    table_index = {u.key: i for i, u in enumerate(table.units)}
    max_total = float(np.max(p.weights))
    raw_max = float(np.max(table.totals)) if table.N else 1.0
    if rcd:
        lo = min(r.age_bp - 4 * r.age_sd for r in rcd)
        hi = max(r.age_bp + 4 * r.age_sd for r in rcd)
        peak = max(_normal_pdf(r.age_bp, r.age_bp, r.age_sd) for r in rcd)
    doc = _Doc("Culture painting with radiocarbon dates")
    panel_w = PAINT_W + 4 + RAW_W
    x = MARGIN
    for col in columns:
        rows = groups[col]
        dates = sorted(by_col[col], key=lambda r: (r.depth_cm, r.age_bp))
        g = ET.SubElement(doc.root, "g", {"class": "panel", "data-column": _column_label(col)})
        _text(g, x, MARGIN + 10, _column_label(col))
        y0 = MARGIN + HEADER_H
        depth_levels = max(level for _, level in rows) + 1
        if dates:
            depth_levels = max(depth_levels, int(math.ceil(max(r.depth_cm for r in dates) / 10)) + 1)
        _painting_rows(g, p, rows, x, y0, True, max_total)
        raw_rows = [(table_index[p.keys[i]], level) for i, level in rows if p.keys[i] in table_index]
        _raw_rows(g, table, raw_rows, x + PAINT_W + 4, y0, raw_max)
        bottom = y0 + depth_levels * ROW_H
        right = x + panel_w
        if dates:
            axis_top = bottom + 10 + LANE * len(dates)
            axis_y = axis_top + AXIS_H
            ax = ET.SubElement(g, "g", {"class": "age-axis"})

            def xa(age):
                return x + (age - lo) / (hi - lo) * panel_w

            ET.SubElement(ax, "line", {"x1": _f(x), "y1": _f(axis_y), "x2": _f(right),
                                       "y2": _f(axis_y), "stroke": "#000000"})
            _text(ax, x, axis_y + 10, f"{lo:.0f} BP", size=6)
            _text(ax, right, axis_y + 10, f"{hi:.0f} BP", size=6, anchor="end")
            for k, r in enumerate(dates):
                level = r.depth_cm / 10.0
                ym = y0 + level * ROW_H
                lane_x = right + LANE * (k + 1)
                mk = ET.SubElement(g, "g", {"class": "rcd", "data-eu": r.eu,
                                            "data-level": f"{level:g}",
                                            "data-age-bp": f"{r.age_bp:g}",
                                            "data-age-sd": f"{r.age_sd:g}"})
                ET.SubElement(mk, "title").text = f"{r.depth_cm:g} cm: {r.age_bp:g} +/- {r.age_sd:g} BP"
                ET.SubElement(mk, "line", {
                    "class": "marker", "x1": _f(x), "y1": _f(ym), "x2": _f(lane_x), "y2": _f(ym),
                    "stroke": "#000000", "stroke-dasharray": "3,2",
                })
                turn_y = axis_top - LANE * k
                ET.SubElement(mk, "polyline", {
                    "class": "leader",
                    "points": f"{_f(lane_x)},{_f(ym)} {_f(lane_x)},{_f(turn_y)} "
                              f"{_f(xa(r.age_bp))},{_f(axis_top + AXIS_H - 30)}",
                    "fill": "none", "stroke": "#000000", "stroke-dasharray": "1,2",
                })
                xs = np.linspace(r.age_bp - 4 * r.age_sd, r.age_bp + 4 * r.age_sd, 81)
                pts = " ".join(
                    f"{_f(xa(v))},{_f(axis_y - 28 * _normal_pdf(v, r.age_bp, r.age_sd) / peak)}"
                    for v in xs)
                ET.SubElement(mk, "polyline", {
                    "class": "density", "points": pts, "fill": "none",
                    "stroke": cp_color(k + 1), "data-peak-x": _f(xa(r.age_bp)),
                })
            doc.grow(right + LANE * (len(dates) + 1), axis_y + 12)
        doc.grow(right + LANE * (len(dates) + 1), bottom)
        x = right + LANE * (len(dates) + 1) + MARGIN
    _legend(doc, _cp_legend(p), "cp")
    return _emit(doc.finish(), out)


def referenced_ids_defined(svg: str) -> bool:
    """True when every ``url(#id)`` / ``href="#id"`` target exists in the document."""
    import re

    root = ET.fromstring(svg)
    ids = {el.get("id") for el in root.iter() if el.get("id")}
    refs = set(re.findall(r"url\(#([^)]+)\)", svg))
    refs |= set(re.findall(r'href="#([^"]+)"', svg))
    return refs <= ids
