"""Per-attribute accuracy table (CSV) and bar chart (SVG) from metrics files."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import DataError
from .metrics import read_metrics

BAR_HEIGHT_PX = 200.0  # an accuracy of 1.0
BAR_WIDTH = 14
GROUP_GAP = 10
MARGIN = 40
COLOURS = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377")


def report(metrics_paths, out_dir, names=None):
    """Write ``accuracy.csv`` and ``accuracy.svg``.  Returns both paths."""
    paths = [Path(p) for p in metrics_paths]
    if not paths:
        raise DataError("report needs at least one metrics file")
    names = list(names) if names else [p.stem for p in paths]
    reports = [read_metrics(p) for p in paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_path = out / "accuracy.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "accuracy", "source"])
        for name, rep in zip(names, reports):
            for label in rep.evaluated_labels:
                w.writerow([label, f"{rep.per_label_accuracy[label]:.6f}", name])

    svg_path = out / "accuracy.svg"
    svg_path.write_text(bar_chart(reports, names), encoding="utf-8")
    return csv_path, svg_path


def bar_chart(reports, names):
    labels = [k for k in reports[0].per_label_accuracy if any(r.per_label_accuracy.get(k) is not None
                                                                  for r in reports)]
    group = len(reports) * BAR_WIDTH + GROUP_GAP
    width = 2 * MARGIN + len(labels) * group
    base = MARGIN + BAR_HEIGHT_PX
    height = base + 170 + 16 * len(reports)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height:.0f}" '
        f'viewBox="0 0 {width} {height:.0f}">',
        f'<line x1="{MARGIN}" y1="{base}" x2="{width - MARGIN}" y2="{base}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{width - MARGIN}" y2="{MARGIN}" stroke="#bbb" '
        'stroke-dasharray="4 3"/>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" font-size="10" text-anchor="end">1.0</text>',
    ]
    for i, label in enumerate(labels):
        x0 = MARGIN + i * group + GROUP_GAP / 2
        for j, (name, rep) in enumerate(zip(names, reports)):
            acc = rep.per_label_accuracy.get(label)
            if acc is None:
                continue
            h = acc * BAR_HEIGHT_PX
            parts.append(
                f'<rect class="bar" data-label="{escape(label)}" data-source="{escape(name)}" '
                f'data-accuracy="{acc:.6f}" x="{x0 + j * BAR_WIDTH:.1f}" y="{base - h:.3f}" '
                f'width="{BAR_WIDTH - 2}" height="{h:.3f}" fill="{COLOURS[j % len(COLOURS)]}"/>'
            )
        cx = x0 + len(reports) * BAR_WIDTH / 2
        parts.append(f'<text x="{cx:.1f}" y="{base + 10}" font-size="10" text-anchor="end" '
                     f'transform="rotate(-60 {cx:.1f} {base + 10})">{escape(label)}</text>')
    for j, name in enumerate(names):
        y = base + 160 + 16 * j
        parts.append(f'<rect x="{MARGIN}" y="{y - 9}" width="10" height="10" fill="{COLOURS[j % len(COLOURS)]}"/>')
        parts.append(f'<text x="{MARGIN + 14}" y="{y}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
