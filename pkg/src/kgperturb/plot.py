"""Self-contained SVG line charts for scale sweeps (no external assets)."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from collections import defaultdict

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
PANEL_W, PANEL_H, PAD = 260, 200, 36


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def series_means(rows: list[dict], metric: str) -> dict[str, list[tuple[float, float]]]:
    """Average ``metric`` over seeds per (method, scale); undefined (NaN) values are skipped."""
    acc = defaultdict(list)
    for r in rows:
        v = float(r[metric])
        if math.isfinite(v):
            acc[(r["method"], float(r["scale"]))].append(v)
    out = defaultdict(list)
    for (method, scale), vals in sorted(acc.items()):
        out[method].append((scale, sum(vals) / len(vals)))
    return dict(out)


def curve_svg(rows: list[dict], metrics=("downstream", "ats", "sc2d", "sd2")) -> str:
    """One panel per metric, one polyline per method; values averaged over seeds."""
    methods = sorted({r["method"] for r in rows})
    width = PANEL_W * len(metrics)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(PANEL_H + 40),
                     viewBox=f"0 0 {width} {PANEL_H + 40}")
    for k, metric in enumerate(metrics):
        data = series_means(rows, metric)
        vals = [v for pts in data.values() for _, v in pts] or [0.0, 1.0]
        lo, hi = min(vals), max(vals)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        x0 = k * PANEL_W
        g = ET.SubElement(svg, "g", {"class": "panel", "data-metric": metric})
        ET.SubElement(g, "rect", x=str(x0 + PAD), y=str(PAD // 2), width=str(PANEL_W - 2 * PAD + 10),
                      height=str(PANEL_H - PAD), fill="none", stroke="#444")
        title = ET.SubElement(g, "text", {"x": str(x0 + PANEL_W // 2), "y": str(PAD // 2 - 4),
                                          "text-anchor": "middle", "font-size": "12"})
        title.text = metric
        for label, yv in ((_fmt(hi), PAD // 2 + 10), (_fmt(lo), PANEL_H - PAD // 2)):
            t = ET.SubElement(g, "text", {"x": str(x0 + 2), "y": str(yv), "font-size": "9"})
            t.text = label

        def px(scale, v):
            x = x0 + PAD + scale * (PANEL_W - 2 * PAD)
            y = PAD // 2 + (1.0 - (v - lo) / (hi - lo)) * (PANEL_H - PAD)
            return f"{x:.2f},{y:.2f}"

        for i, method in enumerate(methods):
            pts = data.get(method, [])
            ET.SubElement(g, "polyline", {"class": "series", "data-method": method, "fill": "none",
                                          "stroke": PALETTE[i % len(PALETTE)], "stroke-width": "1.5",
                                          "points": " ".join(px(s, v) for s, v in pts)})
        ax = ET.SubElement(g, "text", {"x": str(x0 + PANEL_W // 2), "y": str(PANEL_H + 4), "font-size": "10",
                                       "text-anchor": "middle"})
        ax.text = "perturbation scale"
    legend = ET.SubElement(svg, "g", {"class": "legend"})
    for i, method in enumerate(methods):
        t = ET.SubElement(legend, "text", {"x": str(PAD + 70 * i), "y": str(PANEL_H + 30), "font-size": "11",
                                           "fill": PALETTE[i % len(PALETTE)]})
        t.text = method
    return ET.tostring(svg, encoding="unicode") + "\n"
