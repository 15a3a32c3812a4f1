"""Box-plot SVGs of per-method error distributions (no plotting library)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import percentile

WHISKER_RULE = "whiskers reach the most extreme sample within 1.5 IQR of the quartiles"
BOX_W, GAP, HEIGHT, MARGIN = 60, 40, 300, 50


def box_stats(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    q1, med, q3 = percentile(v, 25), percentile(v, 50), percentile(v, 75)
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    lo, hi = float(inside.min()), float(inside.max())
    out = v[(v < lo) | (v > hi)]
    return {"n": int(v.size), "q1": q1, "median": med, "q3": q3, "whisker_lo": lo, "whisker_hi": hi,
            "outliers": out.tolist(), "outlier_fraction": out.size / v.size}


def box_svg(metric: str, groups: dict) -> str:
    """One box per method; statistics stored verbatim in ``data-*`` attributes."""
    stats = {m: box_stats(v) for m, v in groups.items()}
    top = max(max([s["whisker_hi"], *s["outliers"]]) for s in stats.values())
    bot = min(min([s["whisker_lo"], *s["outliers"]]) for s in stats.values())
    span = (top - bot) or 1.0

    def y(v):
        return MARGIN + HEIGHT * (1 - (v - bot) / span)

    width = 2 * MARGIN + len(stats) * (BOX_W + GAP)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT + 2 * MARGIN + 30}">',
           f"<desc>{escape(WHISKER_RULE)}; box from first to third quartile, line at median</desc>",
           f'<text x="{MARGIN}" y="20">{escape(metric)}</text>']
    for i, (method, s) in enumerate(stats.items()):
        x0 = MARGIN + GAP / 2 + i * (BOX_W + GAP)
        xm = x0 + BOX_W / 2
        attrs = " ".join(f'data-{k.replace("_", "-")}="{s[k]!r}"' for k in
                         ("n", "q1", "median", "q3", "whisker_lo", "whisker_hi", "outlier_fraction"))
        out.append(f'<g class="box" data-method="{escape(method)}" {attrs}>')
        out.append(f'<line x1="{xm}" x2="{xm}" y1="{y(s["whisker_hi"]):.2f}" y2="{y(s["q3"]):.2f}" stroke="black"/>')
        out.append(f'<line x1="{xm}" x2="{xm}" y1="{y(s["q1"]):.2f}" y2="{y(s["whisker_lo"]):.2f}" stroke="black"/>')
        out.append(f'<rect x="{x0}" y="{y(s["q3"]):.2f}" width="{BOX_W}" '
                   f'height="{max(y(s["q1"]) - y(s["q3"]), 0):.2f}" fill="#cde" stroke="black"/>')
        out.append(f'<line x1="{x0}" x2="{x0 + BOX_W}" y1="{y(s["median"]):.2f}" y2="{y(s["median"]):.2f}" '
                   f'stroke="black" stroke-width="2"/>')
        for o in s["outliers"]:
            out.append(f'<circle cx="{xm}" cy="{y(o):.2f}" r="2" fill="none" stroke="gray"/>')
        out.append(f'<text x="{x0}" y="{HEIGHT + 2 * MARGIN + 15}">{escape(method)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(summaries: dict, out_dir) -> list[Path]:
    """``summaries[method][metric]`` holds raw error values; writes ``box_<metric>.svg``."""
    if not summaries:
        raise ValueError("no summaries to plot")
    metrics = list(dict.fromkeys(m for per in summaries.values() for m in per))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in metrics:
        groups = {meth: per[metric] for meth, per in summaries.items() if len(per.get(metric, ())) > 0}
        if not groups:
            continue
        p = out_dir / f"box_{metric}.svg"
        p.write_text(box_svg(metric, groups))
        paths.append(p)
    return paths
