"""Small deterministic SVG writers (no timestamps, fixed number formatting)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 300
MARGIN = 40
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _num(v: float) -> str:
    return f"{v:.3f}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - 10}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]


def loss_curves_svg(series: Mapping[str, Sequence[float]], title: str = "training loss") -> str:
    """One polyline per named series, sharing a y-axis from 0 to the max value."""
    if not series or any(len(v) == 0 for v in series.values()):
        raise ValueError("loss_curves_svg: need at least one non-empty series")
    top = max(max(v) for v in series.values())
    top = top if top > 0 else 1.0
    n = max(len(v) for v in series.values())
    plot_w = WIDTH - MARGIN - 10
    plot_h = HEIGHT - 2 * MARGIN
    lines = _header(title)
    lines.append(f'<text x="5" y="{MARGIN}" font-size="10">{_num(top)}</text>')
    for idx, (label, values) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        pts = []
        for i, v in enumerate(values):
            x = MARGIN + (plot_w * i / (n - 1) if n > 1 else plot_w / 2)
            y = HEIGHT - MARGIN - plot_h * max(v, 0.0) / top
            pts.append(f"{_num(x)},{_num(y)}")
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(pts)}"/>')
        lines.append(
            f'<text x="{WIDTH - 120}" y="{MARGIN + 14 * idx}" font-size="11" fill="{color}">{escape(label)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def bars_svg(labels: Sequence[str], values: Sequence[float], title: str = "ablation") -> str:
    """Vertical bars, height proportional to value (axis from 0 to the max).

    Each bar carries ``data-value`` so readers can check heights against it.
    """
    if len(labels) == 0 or len(labels) != len(values):
        raise ValueError("bars_svg: need equally many labels and values, at least one")
    top = max(max(values), 0.0) or 1.0
    plot_w = WIDTH - MARGIN - 10
    plot_h = HEIGHT - 2 * MARGIN
    slot = plot_w / len(values)
    bar_w = slot * 0.7
    lines = _header(title)
    lines.append(f'<text x="5" y="{MARGIN}" font-size="10">{_num(top)}</text>')
    for i, (label, v) in enumerate(zip(labels, values)):
        h = plot_h * max(v, 0.0) / top
        x = MARGIN + slot * i + (slot - bar_w) / 2
        y = HEIGHT - MARGIN - h
        color = PALETTE[i % len(PALETTE)]
        lines.append(
            f'<rect class="bar" x="{_num(x)}" y="{_num(y)}" width="{_num(bar_w)}" height="{_num(h)}" '
            f'fill="{color}" data-value="{v!r}"/>'
        )
        lines.append(
            f'<text x="{_num(x + bar_w / 2)}" y="{HEIGHT - MARGIN + 14}" font-size="9" '
            f'text-anchor="middle">{escape(label)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plots(logs: Mapping[str, "object"], out_dir: str | Path, prefix: str = "") -> list[Path]:
    """Write ``loss.svg`` and ``metric.svg`` for named MetricsLogs; returns the paths."""
    if not logs:
        raise ValueError("emit_plots: no logs given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loss = {name: lg.losses for name, lg in logs.items()}
    final = [lg.metrics[-1] if lg.metrics else 0.0 for lg in logs.values()]
    paths = [out_dir / f"{prefix}loss.svg", out_dir / f"{prefix}metric.svg"]
    paths[0].write_text(loss_curves_svg(loss), encoding="utf-8")
    paths[1].write_text(bars_svg(list(logs), final, "final metric"), encoding="utf-8")
    return paths
