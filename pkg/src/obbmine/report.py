"""Run reporting: learning-curve SVG and end-of-run summary from metrics.csv.

The SVG is assembled by hand (fixed canvas, fixed decimal formatting) so a
re-rendered report is byte-identical for byte-identical metrics.
"""

from __future__ import annotations

from pathlib import Path

from . import io
from .errors import DataError

SUMMARY_HEADER = "category,AP,precision,recall,frozen_count,box_ratio"

_WIDTH, _HEIGHT = 720, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56, 160, 32, 44
_SERIES = (
    # column name in metrics.csv, stroke color, legend label
    ("AP", "#1f77b4", "mAP"),
    ("precision", "#2ca02c", "pseudo precision"),
    ("recall", "#d62728", "pseudo recall"),
    ("box_ratio", "#9467bd", "box ratio"),
    ("frozen_count", "#ff7f0e", "frozen / max"),
)


def _parse_rows(raw_rows, where: str):
    """metrics.csv fields -> typed tuples (epoch, category, floats...)."""
    cols = io.METRICS_HEADER.split(",")
    rows = []
    for i, row in enumerate(raw_rows):
        try:
            rows.append((int(row[0]), row[1]) + tuple(float(v)
                                                      for v in row[2:]))
        except ValueError as exc:
            raise DataError(f"{where}: bad value in row {i + 2}: {exc}") from exc
    return cols, rows


def load_metrics(run_dir) -> list:
    """Typed metrics rows from <run_dir>/metrics.csv."""
    path = Path(run_dir) / "metrics.csv"
    raw = io.read_csv(path, io.METRICS_HEADER)
    _, rows = _parse_rows(raw, str(path))
    return rows


def _aggregates(rows):
    return [r for r in rows if r[1] == "all"]


def _x(i: int, n: int) -> float:
    span = _WIDTH - _MARGIN_L - _MARGIN_R
    if n <= 1:
        return _MARGIN_L + span / 2.0
    return _MARGIN_L + span * i / (n - 1)


def _y(value: float) -> float:
    span = _HEIGHT - _MARGIN_T - _MARGIN_B
    v = min(max(value, 0.0), 1.0)
    return _MARGIN_T + span * (1.0 - v)


def render_svg(rows) -> str:
    """Learning curves over the aggregate ('all') rows of a metrics table."""
    agg = _aggregates(rows)
    cols = io.METRICS_HEADER.split(",")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_MARGIN_L}" y="20" font-family="monospace" '
        f'font-size="14">pseudo-label mining run</text>',
    ]
    # axes box and horizontal grid lines at 0, 0.25, ..., 1.0
    x0, x1 = _MARGIN_L, _WIDTH - _MARGIN_R
    y0, y1 = _HEIGHT - _MARGIN_B, _MARGIN_T
    for k in range(5):
        v = k / 4.0
        y = _y(v)
        out.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end" '
                   f'font-family="monospace" font-size="11">{v:.2f}</text>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" '
               f'stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" '
               f'stroke="black"/>')

    if not agg:
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{(y0 + y1) / 2:.1f}" '
                   f'text-anchor="middle" font-family="monospace" '
                   f'font-size="13">no epochs logged</text>')
    else:
        n = len(agg)
        for i, row in enumerate(agg):
            x = _x(i, n)
            out.append(f'<text x="{x:.1f}" y="{y0 + 16}" text-anchor="middle" '
                       f'font-family="monospace" font-size="11">{row[0]}</text>')
        frozen_idx = cols.index("frozen_count")
        frozen_max = max(r[frozen_idx] for r in agg)
        for s, (col, color, label) in enumerate(_SERIES):
            ci = cols.index(col)
            values = [r[ci] for r in agg]
            if col == "frozen_count":
                values = [v / frozen_max if frozen_max else 0.0
                          for v in values]
                label = f"frozen / max ({int(frozen_max)})"
            pts = " ".join(f"{_x(i, n):.1f},{_y(v):.1f}"
                           for i, v in enumerate(values))
            if n == 1:
                out.append(f'<circle cx="{_x(0, 1):.1f}" '
                           f'cy="{_y(values[0]):.1f}" r="3" fill="{color}"/>')
            else:
                out.append(f'<polyline points="{pts}" fill="none" '
                           f'stroke="{color}" stroke-width="1.5"/>')
            ly = _MARGIN_T + 14 + 18 * s
            lx = _WIDTH - _MARGIN_R + 16
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                       f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 28}" y="{ly}" font-family="monospace" '
                       f'font-size="11">{label}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{_HEIGHT - 10}" '
               f'text-anchor="middle" font-family="monospace" '
               f'font-size="11">epoch</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_rows(rows) -> list:
    """Final-epoch rows, per category then 'all', without the epoch column."""
    if not rows:
        return []
    last = max(r[0] for r in rows)
    return [(r[1], r[2], r[3], r[4], int(r[5]), r[6])
            for r in rows if r[0] == last]


def format_summary(rows) -> str:
    """Human-readable end-of-run table (what `eval --run` prints)."""
    final = summary_rows(rows)
    if not final:
        return "no epochs logged\n"
    last = max(r[0] for r in rows)
    lines = [f"epoch {last}",
             f"{'category':<12} {'AP':>8} {'precision':>10} {'recall':>8} "
             f"{'frozen':>7} {'box_ratio':>10}"]
    for cat, ap, prec, rec, frozen, ratio in final:
        lines.append(f"{cat:<12} {ap:>8.4f} {prec:>10.4f} {rec:>8.4f} "
                     f"{int(frozen):>7d} {ratio:>10.4f}")
    return "\n".join(lines) + "\n"


def write_report(run_dir):
    """Render <run_dir>/report.svg and summary.csv from its metrics.csv."""
    run_dir = Path(run_dir)
    rows = load_metrics(run_dir)
    svg_path = run_dir / "report.svg"
    svg_path.write_text(render_svg(rows))
    summary_path = run_dir / "summary.csv"
    io.write_csv(summary_path, SUMMARY_HEADER, summary_rows(rows))
    return svg_path, summary_path
