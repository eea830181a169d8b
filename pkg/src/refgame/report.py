"""Static SVG summary of a finished run.

Reads metrics.jsonl, eval.json and analysis.json and draws three panels:
training accuracy curves, final game accuracy per split, and protocol
scores.  Output is plain hand-assembled SVG with fixed-precision
coordinates, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError

PALETTE = ("#1f6f8b", "#d1495b", "#66a182", "#edae49", "#574ae2", "#8d5a97")

PANEL_W = 420.0
PANEL_H = 260.0
MARGIN = 56.0


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self):
        self.parts: list[str] = []

    def add(self, element: str) -> None:
        self.parts.append(element)

    def text(self, x: float, y: float, s: str, size: int = 12, anchor: str = "start",
             color: str = "#222222") -> None:
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                 f'font-family="sans-serif" text-anchor="{anchor}" fill="{color}">{s}</text>')

    def line(self, x1, y1, x2, y2, color="#888888", width=1.0) -> None:
        self.add(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                 f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts: list[tuple[float, float]], color: str) -> None:
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.add(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def rect(self, x, y, w, h, color) -> None:
        self.add(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" '
                 f'fill="{color}"/>')


def _axes(c: _Canvas, ox: float, oy: float, title: str, y_max: float = 1.0) -> None:
    c.line(ox, oy, ox, oy - PANEL_H, color="#444444")
    c.line(ox, oy, ox + PANEL_W, oy, color="#444444")
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = oy - frac * PANEL_H
        c.line(ox - 4, y, ox, y, color="#444444")
        c.text(ox - 8, y + 4, f"{frac * y_max:.2f}", size=10, anchor="end")
    c.text(ox, oy - PANEL_H - 12, title, size=13)


def render_report(out_dir: str | Path) -> str:
    """Build the SVG document; caller decides where to write it."""
    out = Path(out_dir)
    metrics_path = out / "metrics.jsonl"
    eval_path = out / "eval.json"
    analysis_path = out / "analysis.json"
    if not metrics_path.exists() and not eval_path.exists():
        raise DataError(f"nothing to report in {out}: need metrics.jsonl or eval.json")

    curves: dict[str, list[tuple[int, float]]] = {}
    if metrics_path.exists():
        for line in metrics_path.read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            curves.setdefault(row["variant"], []).append((row["epoch"], row["accuracy"]))

    eval_doc = json.loads(eval_path.read_text()) if eval_path.exists() else None
    analysis_doc = json.loads(analysis_path.read_text()) if analysis_path.exists() else None
    if eval_doc is not None and not eval_doc.get("variants"):
        eval_doc = None
    if analysis_doc is not None and not analysis_doc.get("variants"):
        analysis_doc = None

    width = MARGIN * 2 + PANEL_W
    height = MARGIN
    panels = sum(1 for present in (curves, eval_doc, analysis_doc) if present)
    height += panels * (PANEL_H + 2 * MARGIN)

    c = _Canvas()
    c.add(f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(width)}" '
          f'height="{int(height)}" viewBox="0 0 {int(width)} {int(height)}">')
    c.rect(0, 0, width, height, "#ffffff")
    variant_order: list[str] = []
    if eval_doc:
        variant_order = sorted(eval_doc["variants"])
    elif curves:
        variant_order = sorted(curves)

    def color_of(slug: str) -> str:
        if slug not in variant_order:
            variant_order.append(slug)
        return PALETTE[variant_order.index(slug) % len(PALETTE)]

    oy = MARGIN + PANEL_H
    if curves:
        ox = MARGIN
        _axes(c, ox, oy, "training accuracy by epoch")
        max_epoch = max(e for pts in curves.values() for e, _ in pts)
        for slug in sorted(curves):
            pts = sorted(curves[slug])
            scaled = [(ox + (e / max(max_epoch, 1)) * PANEL_W, oy - a * PANEL_H)
                      for e, a in pts]
            c.polyline(scaled, color_of(slug))
        for i, slug in enumerate(sorted(curves)):
            c.rect(ox + PANEL_W - 150, oy - PANEL_H + 14 * i, 10, 10, color_of(slug))
            c.text(ox + PANEL_W - 136, oy - PANEL_H + 14 * i + 9, slug, size=10)
        oy += PANEL_H + 2 * MARGIN

    if eval_doc:
        ox = MARGIN
        _axes(c, ox, oy, "game accuracy by split (hard messages)")
        first_entry = next(iter(eval_doc["variants"].values()))
        splits = tuple(s for s in ("val", "holdout", "blob") if s in first_entry)
        nvars = len(eval_doc["variants"])
        group_w = PANEL_W / len(splits)
        bar_w = group_w / (nvars + 1)
        for si, split in enumerate(splits):
            for vi, slug in enumerate(sorted(eval_doc["variants"])):
                acc = eval_doc["variants"][slug][split]["accuracy"]
                x = ox + si * group_w + (vi + 0.5) * bar_w
                c.rect(x, oy - acc * PANEL_H, bar_w * 0.9, acc * PANEL_H, color_of(slug))
            c.text(ox + si * group_w + group_w / 2, oy + 16, split, size=11, anchor="middle")
        chance = first_entry[splits[0]]["chance"]
        yc = oy - chance * PANEL_H
        c.line(ox, yc, ox + PANEL_W, yc, color="#999999", width=0.8)
        c.text(ox + PANEL_W + 4, yc + 4, "chance", size=9)
        oy += PANEL_H + 2 * MARGIN

    if analysis_doc:
        ox = MARGIN
        _axes(c, ox, oy, "protocol scores on the val split")
        names, values, colors = [], [], []
        for slug in sorted(analysis_doc["variants"]):
            entry = analysis_doc["variants"][slug]
            val = entry["splits"]["val"]
            names.append(f"{slug} nMI")
            values.append(val["nmi"]["value"])
            colors.append(color_of(slug))
            ws = val["wnsim"]["value"]
            if ws is not None:
                names.append(f"{slug} WNsim")
                values.append(ws)
                colors.append(color_of(slug))
            if "kmeans" in entry:
                names.append(f"{slug} kmeans nMI")
                values.append(entry["kmeans"]["nmi"]["value"])
                colors.append(color_of(slug))
        if names:
            bar_w = PANEL_W / len(names)
            for i, (name, val) in enumerate(zip(names, values)):
                x = ox + i * bar_w
                c.rect(x + bar_w * 0.15, oy - val * PANEL_H, bar_w * 0.7,
                       val * PANEL_H, colors[i])
                c.text(x + bar_w / 2, oy + 14, name, size=8, anchor="middle")

    c.add("</svg>")
    return "\n".join(c.parts) + "\n"


def write_report(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    path = out / "report.svg"
    path.write_text(render_report(out))
    return path
