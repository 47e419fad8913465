"""CSV and minimal SVG output helpers."""

import csv
from xml.sax.saxutils import escape


def write_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def bar_chart_svg(labels, values, title="", width=640, height=360) -> str:
    """Plain vertical bar chart; no external plotting dependency."""
    n = max(len(values), 1)
    top = max([float(v) for v in values] + [1e-12])
    margin, base = 40, height - 60
    slot = (width - 2 * margin) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{base}" x2="{width - margin}" y2="{base}" stroke="black"/>',
    ]
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = (base - 40) * float(v) / top
        x = margin + i * slot + slot * 0.15
        parts.append(f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" fill="#4a7ab7"/>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{base - h - 4:.1f}" text-anchor="middle" font-size="10">{float(v):g}</text>')
        parts.append(
            f'<text x="{x + slot * 0.35:.1f}" y="{base + 14}" text-anchor="end" font-size="10" '
            f'transform="rotate(-40 {x + slot * 0.35:.1f} {base + 14})">{escape(str(lab))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
