"""Minimal self-contained SVG output: line charts (log-y capable) and
heatmaps. No plotting library; output is deterministic for fixed inputs."""

from __future__ import annotations

import math

import numpy as np

W, H = 720, 480
ML, MR, MT, MB = 70, 160, 40, 55  # margins: room for the legend on the right
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

# compact viridis-like ramp for heatmaps
_RAMP = [
    (0.0, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.0, (253, 231, 37)),
]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks_linear(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if raw <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def line_chart(
    series: list[tuple[str, list[float], list[float]]],
    x_label: str,
    y_label: str,
    title: str = "",
    y_log: bool = False,
) -> str:
    """series: (label, xs, ys). Non-positive y values are dropped on log axes."""
    pts = []
    for label, xs, ys in series:
        keep = [(x, y) for x, y in zip(xs, ys) if (y > 0 or not y_log) and math.isfinite(x) and math.isfinite(y)]
        pts.append((label, keep))
    all_xy = [p for _, kept in pts for p in kept]
    if not all_xy:
        x0, x1, y0, y1 = 0.0, 1.0, 0.1, 1.0
    else:
        x0 = min(p[0] for p in all_xy)
        x1 = max(p[0] for p in all_xy)
        y0 = min(p[1] for p in all_xy)
        y1 = max(p[1] for p in all_xy)
    if x1 == x0:
        x1 = x0 + 1.0
    if y_log:
        y0e = math.floor(math.log10(y0)) if y0 > 0 else -8
        y1e = math.ceil(math.log10(y1)) if y1 > 0 else 0
        if y1e == y0e:
            y1e += 1
    elif y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return ML + (x - x0) / (x1 - x0) * (W - ML - MR)

    def sy(y):
        if y_log:
            f = (math.log10(y) - y0e) / (y1e - y0e)
        else:
            f = (y - y0) / (y1 - y0)
        return H - MB - f * (H - MT - MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{(ML + W - MR) / 2:.1f}" y="24" text-anchor="middle" font-size="15" font-family="sans-serif">{_esc(title)}</text>',
    ]
    # frame
    out.append(
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#444"/>'
    )
    # y ticks
    if y_log:
        yticks = [10.0**e for e in range(y0e, y1e + 1)]
        ylabels = [f"1e{e}" for e in range(y0e, y1e + 1)]
    else:
        yticks = _ticks_linear(y0, y1)
        ylabels = [f"{t:g}" for t in yticks]
    for t, lab in zip(yticks, ylabels):
        yy = sy(t)
        out.append(f'<line x1="{ML}" y1="{yy:.1f}" x2="{W - MR}" y2="{yy:.1f}" stroke="#ddd"/>')
        out.append(
            f'<text x="{ML - 6}" y="{yy + 4:.1f}" text-anchor="end" font-size="11" font-family="sans-serif">{lab}</text>'
        )
    for t in _ticks_linear(x0, x1):
        xx = sx(t)
        out.append(f'<line x1="{xx:.1f}" y1="{MT}" x2="{xx:.1f}" y2="{H - MB}" stroke="#eee"/>')
        out.append(
            f'<text x="{xx:.1f}" y="{H - MB + 16}" text-anchor="middle" font-size="11" font-family="sans-serif">{t:g}</text>'
        )
    out.append(
        f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="13" font-family="sans-serif">{_esc(x_label)}</text>'
    )
    out.append(
        f'<text x="18" y="{(MT + H - MB) / 2:.1f}" text-anchor="middle" font-size="13" font-family="sans-serif" transform="rotate(-90 18 {(MT + H - MB) / 2:.1f})">{_esc(y_label)}</text>'
    )
    for i, (label, kept) in enumerate(pts):
        color = COLORS[i % len(COLORS)]
        if kept:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in kept)
            out.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>'
            )
            for x, y in kept:
                out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = MT + 16 + 18 * i
        out.append(f'<line x1="{W - MR + 10}" y1="{ly}" x2="{W - MR + 34}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{W - MR + 40}" y="{ly + 4}" font-size="12" font-family="sans-serif">{_esc(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    for (f0, c0), (f1, c1) in zip(_RAMP[:-1], _RAMP[1:]):
        if frac <= f1:
            t = (frac - f0) / (f1 - f0) if f1 > f0 else 0.0
            rgb = [round(a + t * (b - a)) for a, b in zip(c0, c1)]
            return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"
    return "rgb(253,231,37)"


def _downsample(m: np.ndarray, max_rows: int, max_cols: int) -> np.ndarray:
    r = math.ceil(m.shape[0] / max_rows)
    c = math.ceil(m.shape[1] / max_cols)
    if r > 1 or c > 1:
        pr = (-m.shape[0]) % r
        pc = (-m.shape[1]) % c
        m = np.pad(m, ((0, pr), (0, pc)), mode="edge")
        m = m.reshape(m.shape[0] // r, r, m.shape[1] // c, c).mean(axis=(1, 3))
    return m


def heatmap(
    matrix: np.ndarray,
    x_extent: tuple[float, float],
    y_extent: tuple[float, float],
    x_label: str,
    y_label: str,
    title: str = "",
    max_cells: tuple[int, int] = (192, 256),
) -> str:
    """Row 0 renders at the bottom; the matrix is block-averaged down to at
    most max_cells before rasterizing as SVG rects."""
    m = _downsample(np.asarray(matrix, dtype=float), *max_cells)
    lo = float(np.nanmin(m))
    hi = float(np.nanmax(m))
    if hi == lo:
        hi = lo + 1.0
    rows, cols = m.shape
    cw = (W - ML - MR) / cols
    ch = (H - MT - MB) / rows
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{(ML + W - MR) / 2:.1f}" y="24" text-anchor="middle" font-size="15" font-family="sans-serif">{_esc(title)}</text>',
    ]
    for i in range(rows):
        y = H - MB - (i + 1) * ch
        for j in range(cols):
            out.append(
                f'<rect x="{ML + j * cw:.2f}" y="{y:.2f}" width="{cw + 0.5:.2f}" height="{ch + 0.5:.2f}" '
                f'fill="{_color((m[i, j] - lo) / (hi - lo))}"/>'
            )
    out.append(
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#444"/>'
    )
    for frac, val in ((0.0, x_extent[0]), (0.5, sum(x_extent) / 2), (1.0, x_extent[1])):
        xx = ML + frac * (W - ML - MR)
        out.append(
            f'<text x="{xx:.1f}" y="{H - MB + 16}" text-anchor="middle" font-size="11" font-family="sans-serif">{val:g}</text>'
        )
    for frac, val in ((0.0, y_extent[0]), (0.5, sum(y_extent) / 2), (1.0, y_extent[1])):
        yy = H - MB - frac * (H - MT - MB)
        out.append(
            f'<text x="{ML - 6}" y="{yy + 4:.1f}" text-anchor="end" font-size="11" font-family="sans-serif">{val:g}</text>'
        )
    out.append(
        f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="13" font-family="sans-serif">{_esc(x_label)}</text>'
    )
    out.append(
        f'<text x="18" y="{(MT + H - MB) / 2:.1f}" text-anchor="middle" font-size="13" font-family="sans-serif" transform="rotate(-90 18 {(MT + H - MB) / 2:.1f})">{_esc(y_label)}</text>'
    )
    # colorbar
    for k in range(40):
        yy = H - MB - (k + 1) * (H - MT - MB) / 40
        out.append(
            f'<rect x="{W - MR + 20}" y="{yy:.2f}" width="14" height="{(H - MT - MB) / 40 + 0.5:.2f}" fill="{_color(k / 39)}"/>'
        )
    out.append(
        f'<text x="{W - MR + 40}" y="{H - MB + 4}" font-size="11" font-family="sans-serif">{lo:.3g}</text>'
    )
    out.append(
        f'<text x="{W - MR + 40}" y="{MT + 10}" font-size="11" font-family="sans-serif">{hi:.3g}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
