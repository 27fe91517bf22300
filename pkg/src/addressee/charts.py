"""Minimal SVG bar charts for result reports.

Hand-rolled on purpose: the reports need exactly two static displays
(bars, optional SD whiskers, axes, labels), which is not worth a plotting
dependency. Output is a standalone SVG string.
"""

from __future__ import annotations

from .core import InvalidInputError

_PALETTE = ("#4878a8", "#e49444", "#6a9f58", "#d1605e", "#85b6b2", "#a87c9f")

_WIDTH = 640
_HEIGHT = 400
_MARGIN_L = 64
_MARGIN_R = 24
_MARGIN_T = 48
_MARGIN_B = 64


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _axis(parts: list[str], y_max: float, y_label: str):
    x0, x1 = _MARGIN_L, _WIDTH - _MARGIN_R
    y0, y1 = _HEIGHT - _MARGIN_B, _MARGIN_T
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>')
    ticks = 5
    for i in range(ticks + 1):
        frac = i / ticks
        y = y0 - frac * (y0 - y1)
        val = frac * y_max
        parts.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="#333"/>')
        parts.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" '
                     f'stroke="#ddd" stroke-width="0.5"/>')
        parts.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{val:.1f}</text>')
    parts.append(f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">{_esc(y_label)}</text>')


def _bar(parts: list[str], x: float, width: float, value: float, err: float | None,
         color: str, y_max: float):
    y0 = _HEIGHT - _MARGIN_B
    y1 = _MARGIN_T
    scale = (y0 - y1) / y_max
    top = y0 - value * scale
    parts.append(f'<rect x="{x:.1f}" y="{top:.1f}" width="{width:.1f}" '
                 f'height="{y0 - top:.1f}" fill="{color}"/>')
    label_y = top - 6
    if err is not None and err > 0:
        cx = x + width / 2
        lo = y0 - max(value - err, 0.0) * scale
        hi = y0 - min(value + err, y_max) * scale
        parts.append(f'<line x1="{cx:.1f}" y1="{lo:.1f}" x2="{cx:.1f}" y2="{hi:.1f}" '
                     f'stroke="#222" stroke-width="1.5"/>')
        for yy in (lo, hi):
            parts.append(f'<line x1="{cx - 5:.1f}" y1="{yy:.1f}" x2="{cx + 5:.1f}" '
                         f'y2="{yy:.1f}" stroke="#222" stroke-width="1.5"/>')
        label_y = min(label_y, hi - 6)
    parts.append(f'<text x="{x + width / 2:.1f}" y="{label_y:.1f}" text-anchor="middle" '
                 f'font-size="10">{value:.3f}</text>')


def render_bar_chart(title: str, labels: list[str], values: list[float],
                     errors: list[float] | None = None, y_label: str = "F1-score",
                     y_max: float = 1.0) -> str:
    """Single-series bar chart with optional SD whiskers."""
    if not labels or len(labels) != len(values):
        raise InvalidInputError("labels and values must be equal-length and non-empty")
    if errors is not None and len(errors) != len(values):
        raise InvalidInputError("errors must match values")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
             f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
             f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
             f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" font-size="14" '
             f'font-weight="bold">{_esc(title)}</text>']
    _axis(parts, y_max, y_label)
    span = _WIDTH - _MARGIN_L - _MARGIN_R
    slot = span / len(labels)
    bar_w = slot * 0.55
    y0 = _HEIGHT - _MARGIN_B
    for i, (label, value) in enumerate(zip(labels, values)):
        x = _MARGIN_L + i * slot + (slot - bar_w) / 2
        err = errors[i] if errors is not None else None
        _bar(parts, x, bar_w, value, err, _PALETTE[i % len(_PALETTE)], y_max)
        parts.append(f'<text x="{_MARGIN_L + i * slot + slot / 2:.1f}" y="{y0 + 18}" '
                     f'text-anchor="middle" font-size="11">{_esc(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_grouped_bar_chart(title: str, group_labels: list[str],
                             series_labels: list[str], values: list[list[float]],
                             errors: list[list[float]] | None = None,
                             y_label: str = "F1-score", y_max: float = 1.0) -> str:
    """Grouped bars: values[group][series], with a legend."""
    if not group_labels or not series_labels:
        raise InvalidInputError("need at least one group and one series")
    if len(values) != len(group_labels) or any(len(row) != len(series_labels) for row in values):
        raise InvalidInputError("values must be shaped [group][series]")
    if errors is not None and (len(errors) != len(values)
                               or any(len(row) != len(series_labels) for row in errors)):
        raise InvalidInputError("errors must be shaped [group][series]")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
             f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
             f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
             f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" font-size="14" '
             f'font-weight="bold">{_esc(title)}</text>']
    _axis(parts, y_max, y_label)
    span = _WIDTH - _MARGIN_L - _MARGIN_R
    slot = span / len(group_labels)
    group_w = slot * 0.8
    bar_w = group_w / len(series_labels)
    y0 = _HEIGHT - _MARGIN_B
    for gi, label in enumerate(group_labels):
        gx = _MARGIN_L + gi * slot + (slot - group_w) / 2
        for si in range(len(series_labels)):
            err = errors[gi][si] if errors is not None else None
            _bar(parts, gx + si * bar_w, bar_w * 0.92, values[gi][si], err,
                 _PALETTE[si % len(_PALETTE)], y_max)
        parts.append(f'<text x="{_MARGIN_L + gi * slot + slot / 2:.1f}" y="{y0 + 18}" '
                     f'text-anchor="middle" font-size="11">{_esc(label)}</text>')
    lx = _MARGIN_L + 8
    ly = _HEIGHT - 22
    for si, name in enumerate(series_labels):
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="12" '
                     f'fill="{_PALETTE[si % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly + 1}" font-size="11">{_esc(name)}</text>')
        lx += 16 + 8 * len(name) + 24
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
