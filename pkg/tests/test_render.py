import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from culturepaint.io import InputError, RcdRow
from culturepaint.model import CountTable, UnitLevel
from culturepaint.postprocess import PaintingMatrix
from culturepaint.render import (
    CP_PALETTE,
    DECORATION_PALETTE,
    RAW_W,
    RESIDUAL_COLOR,
    ROW_H,
    blend,
    lightness,
    referenced_ids_defined,
    render_painting,
    render_raw,
    render_rcd_overlay,
)

NS = {"s": "http://www.w3.org/2000/svg"}


def parse(svg):
    root = ET.fromstring(svg.split("\n", 1)[1])
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert root.get("version") == "1.1"
    assert referenced_ids_defined(svg)
    return root


def table(rows, labels=("a", "b"), eu="2", site="A"):
    return CountTable(tuple(UnitLevel(site, eu, None, j, r) for j, r in enumerate(rows)), labels)


def shades(root):
    return [float(r.get("data-lightness")) for r in root.iter("{%s}rect" % NS["s"])
            if r.get("class") == "shade"]


def test_palettes_are_distinct_hex():
    assert len(CP_PALETTE) == 15 and len(set(CP_PALETTE)) == 15
    assert RESIDUAL_COLOR not in CP_PALETTE
    assert len(set(DECORATION_PALETTE)) == len(DECORATION_PALETTE) >= 25
    for c in CP_PALETTE + (RESIDUAL_COLOR,):
        assert re.fullmatch(r"#[0-9a-f]{6}", c)


def test_lightness_formula():
    assert lightness(10, 10) == 0.0
    assert lightness(0, 10) == 1.0
    assert lightness(3, 15) == pytest.approx(1 - math.log(4) / math.log(16))


def test_raw_single_cell_full_width_darkest():
    root = parse(render_raw(table([(0, 5)])))
    bars = [r for r in root.iter("{%s}rect" % NS["s"]) if r.get("data-decoration")]
    assert len(bars) == 1
    assert float(bars[0].get("width")) == RAW_W
    assert bars[0].get("fill") == DECORATION_PALETTE[1]
    assert shades(root) == [0.0]


def test_raw_equal_totals_equal_shading():
    root = parse(render_raw(table([(3, 7), (6, 4), (1, 1)])))
    s = shades(root)
    assert s[0] == s[1] == 0.0
    assert s[2] == pytest.approx(1 - math.log(3) / math.log(11), abs=1e-4)


def test_raw_bars_proportional_and_depth_downward():
    root = parse(render_raw(table([(1, 3), (2, 2)])))
    rows = [g for g in root.iter("{%s}g" % NS["s"]) if g.get("class") == "unit-level"]
    widths = [float(r.get("width")) for r in rows[0] if r.get("data-decoration")]
    assert widths == pytest.approx([RAW_W / 4, 3 * RAW_W / 4], abs=0.01)
    y0 = float(rows[0].find("s:rect", NS).get("y"))
    y1 = float(rows[1].find("s:rect", NS).get("y"))
    assert y1 - y0 == ROW_H


def test_raw_rejects_empty_table():
    with pytest.raises(ValueError):
        render_raw(CountTable((), ("a",)))


def painting_of(values, totals=None, residual=None, keys=None):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    keys = keys or tuple(("A", "2", None, j) for j in range(n))
    w = np.asarray(totals if totals is not None else [10] * n, dtype=float)
    return PaintingMatrix(keys, tuple(range(1, values.shape[1] + 1)), values, w, residual)


def cells(root):
    return [g for g in root.iter("{%s}g" % NS["s"]) if g.get("class") == "cell"]


def test_one_hot_painting_is_solid():
    root = parse(render_painting(painting_of(np.eye(3)), shaded=False))
    fills = [c.find("s:rect", NS).get("fill") for c in cells(root)]
    assert fills == list(CP_PALETTE[:3])


def test_fifty_fifty_blend_and_tooltip():
    root = parse(render_painting(painting_of([[0.5, 0.5]]), shaded=False))
    (cell,) = cells(root)
    assert cell.find("s:rect", NS).get("fill") == blend([0.5, 0.5], CP_PALETTE[:2])
    assert cell.find("s:rect", NS).get("fill") not in CP_PALETTE
    title = cell.find("s:title", NS).text
    assert "C1 0.50" in title and "C2 0.50" in title


def test_residual_is_neutral():
    root = parse(render_painting(painting_of([[0, 0, 1.0]], residual=3), shaded=False))
    assert cells(root)[0].find("s:rect", NS).get("fill") == RESIDUAL_COLOR


def test_shading_only_changes_lightness():
    p = painting_of([[0.2, 0.8], [1, 0], [0.5, 0.5]], totals=[5, 100, 30])
    on = render_painting(p, True)
    off = render_painting(p, False)
    assert on != off
    strip = re.compile(r'(fill-opacity|data-lightness)="[^"]*"')
    assert strip.sub("", on) == strip.sub("", off)
    assert shades(parse(off)) == [0.0, 0.0, 0.0]
    assert shades(parse(on))[1] == 0.0


def test_renders_are_byte_stable():
    t = table([(3, 7), (6, 4)])
    p = painting_of([[0.3, 0.7], [1, 0]], totals=[10, 10])
    rcd = [RcdRow("2", 5.0, 900.0, 40.0)]
    assert render_raw(t) == render_raw(t)
    assert render_painting(p) == render_painting(p)
    assert render_rcd_overlay(p, t, rcd) == render_rcd_overlay(p, t, rcd)


def overlay_fixture(n_levels=25):
    rows = [(j + 1, 10) for j in range(n_levels)]
    t = table(rows)
    vals = np.zeros((n_levels, 2))
    vals[: n_levels // 2, 0] = 1
    vals[n_levels // 2:, 1] = 1
    p = painting_of(vals, totals=t.totals, keys=tuple(u.key for u in t.units))
    return t, p


def groups(root, cls):
    return [g for g in root.iter("{%s}g" % NS["s"]) if g.get("class") == cls]


def test_overlay_without_rcd_has_no_axis():
    t, p = overlay_fixture()
    root = parse(render_rcd_overlay(p, t, []))
    assert groups(root, "age-axis") == []
    assert len(groups(root, "panel")) == 1


def test_overlay_marker_position_and_density_centre():
    t, p = overlay_fixture()
    root = parse(render_rcd_overlay(p, t, [RcdRow("2", 220.0, 1000.0, 50.0)]))
    (mk,) = groups(root, "rcd")
    assert mk.get("data-level") == "22" and mk.get("data-age-bp") == "1000"
    marker = [el for el in mk if el.get("class") == "marker"][0]
    first_cell = cells(root)[0].find("s:rect", NS)
    y0 = float(first_cell.get("y"))
    assert float(marker.get("y1")) == pytest.approx(y0 + 22 * ROW_H)
    assert marker.get("stroke-dasharray")
    dens = [el for el in mk if el.get("class") == "density"][0]
    pts = np.array([[float(v) for v in xy.split(",")] for xy in dens.get("points").split()])
    peak = pts[np.argmin(pts[:, 1])]
    assert peak[0] == pytest.approx(float(dens.get("data-peak-x")), abs=0.01)
    # symmetric curve: the peak sits at the middle sample
    assert np.argmin(pts[:, 1]) == len(pts) // 2
    assert len(groups(root, "age-axis")) == 1


def segments(polyline):
    pts = [tuple(float(v) for v in xy.split(",")) for xy in polyline.get("points").split()]
    return list(zip(pts[:-1], pts[1:]))


def collinear_overlap(s1, s2, tol=1e-6):
    (a, b), (c, d) = s1, s2
    ab = np.subtract(b, a)
    for p in (c, d):
        if abs(ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])) > tol:
            return False
    L = float(np.dot(ab, ab))
    if L == 0:
        return False
    t = sorted(float(np.dot(np.subtract(p, a), ab)) / L for p in (c, d))
    return min(1.0, t[1]) - max(0.0, t[0]) > tol


def test_two_dates_same_eu_do_not_share_leader_segments():
    t, p = overlay_fixture()
    rcd = [RcdRow("2", 100.0, 1000.0, 50.0), RcdRow("2", 100.0, 1000.0, 50.0),
           RcdRow("2", 150.0, 1200.0, 80.0)]
    root = parse(render_rcd_overlay(p, t, rcd))
    marks = groups(root, "rcd")
    assert len(marks) == 3
    leaders = [[el for el in m if el.get("class") == "leader"][0] for m in marks]
    for i in range(len(leaders)):
        for j in range(i + 1, len(leaders)):
            for s1 in segments(leaders[i]):
                for s2 in segments(leaders[j]):
                    assert not collinear_overlap(s1, s2)
    assert all(el.get("stroke-dasharray") == "1,2" for el in leaders)


def test_overlay_unknown_eu():
    t, p = overlay_fixture()
    with pytest.raises(InputError, match="unknown EU"):
        render_rcd_overlay(p, t, [RcdRow("9", 10.0, 500.0, 20.0)])


def test_overlay_ambiguous_eu_needs_site():
    t1 = CountTable(tuple(UnitLevel(s, "1", None, 0, (1, 2)) for s in ("A", "B")), ("a", "b"))
    p = painting_of([[1, 0], [0, 1]], keys=tuple(u.key for u in t1.units))
    with pytest.raises(InputError, match="site/eu"):
        render_rcd_overlay(p, t1, [RcdRow("1", 0.0, 500.0, 20.0)])
    root = parse(render_rcd_overlay(p, t1, [RcdRow("B/1", 0.0, 500.0, 20.0)]))
    assert len(groups(root, "rcd")) == 1


def test_write_to_path(tmp_path):
    out = tmp_path / "r.svg"
    svg = render_raw(table([(1, 2)]), out)
    assert out.read_text(encoding="utf-8") == svg
