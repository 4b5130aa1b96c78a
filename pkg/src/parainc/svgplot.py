"""Minimal deterministic SVG line plots: fixed viewport, no timestamps,
no external references.  Good enough for the experiment reports."""

from __future__ import annotations

import math

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class PlotError(ValueError):
    pass


def _fmt(x):
    return f"{x:.6g}"


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _log_ticks(lo, hi):
    ticks = []
    d = math.floor(math.log10(lo))
    while 10.0**d <= hi * (1 + 1e-12):
        if 10.0**d >= lo * (1 - 1e-12):
            ticks.append(10.0**d)
        d += 1
    if not ticks:
        ticks = [lo, hi]
    return ticks


def render_line_plot(series, xlabel="", ylabel="", title="",
                     xscale="linear", yscale="linear", annotations=()):
    """Return an SVG document for named (x, y) series.

    ``series`` is a list of (name, x array, y array).  Log scales drop
    nonpositive points.
    """
    if not series:
        raise PlotError("no series to plot")
    pts = []
    for name, xs, ys in series:
        if len(xs) != len(ys):
            raise PlotError(f"series {name!r} length mismatch")
        for x, y in zip(xs, ys):
            if xscale == "log" and x <= 0:
                continue
            if yscale == "log" and y <= 0:
                continue
            pts.append((float(x), float(y)))
    if not pts:
        raise PlotError("no plottable points")

    def tx(v):
        return math.log10(v) if xscale == "log" else v

    def ty(v):
        return math.log10(v) if yscale == "log" else v

    xs_all = [tx(p[0]) for p in pts]
    ys_all = [ty(p[1]) for p in pts]
    xlo, xhi = min(xs_all), max(xs_all)
    ylo, yhi = min(ys_all), max(ys_all)
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    padx, pady = 0.04 * (xhi - xlo), 0.06 * (yhi - ylo)
    xlo, xhi, ylo, yhi = xlo - padx, xhi + padx, ylo - pady, yhi + pady

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (tx(v) - xlo) / (xhi - xlo) * inner_w

    def py(v):
        return HEIGHT - MARGIN_B - (ty(v) - ylo) / (yhi - ylo) * inner_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{inner_w}" '
           f'height="{inner_h}" fill="none" stroke="black"/>']

    if xscale == "log":
        xticks = _log_ticks(10.0**xlo, 10.0**xhi)
    else:
        xticks = _nice_ticks(xlo, xhi)
    if yscale == "log":
        yticks = _log_ticks(10.0**ylo, 10.0**yhi)
    else:
        yticks = _nice_ticks(ylo, yhi)

    for t in xticks:
        v = t if xscale == "log" else t
        x = MARGIN_L + ((math.log10(v) if xscale == "log" else v) - xlo) / (xhi - xlo) * inner_w
        if x < MARGIN_L - 1 or x > WIDTH - MARGIN_R + 1:
            continue
        y0 = HEIGHT - MARGIN_B
        out.append(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{y0 + 18}" font-size="11" '
                   f'text-anchor="middle" font-family="monospace">{_fmt(v)}</text>')
    for t in yticks:
        v = t
        y = HEIGHT - MARGIN_B - ((math.log10(v) if yscale == "log" else v) - ylo) / (yhi - ylo) * inner_h
        if y < MARGIN_T - 1 or y > HEIGHT - MARGIN_B + 1:
            continue
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{_fmt(y)}" x2="{MARGIN_L}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(y + 4)}" font-size="11" '
                   f'text-anchor="end" font-family="monospace">{_fmt(v)}</text>')

    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = []
        for x, y in zip(xs, ys):
            if xscale == "log" and x <= 0:
                continue
            if yscale == "log" and y <= 0:
                continue
            coords.append(f"{_fmt(px(x))},{_fmt(py(y))}")
        if not coords:
            continue
        out.append(f'<polyline points="{" ".join(coords)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        for c in coords:
            cx, cy = c.split(",")
            out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - MARGIN_R - 8}" y="{MARGIN_T + 16 + 14 * i}" '
                   f'font-size="12" text-anchor="end" fill="{color}" '
                   f'font-family="monospace">{name}</text>')

    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" font-size="14" text-anchor="middle" '
                   f'font-family="monospace">{title}</text>')
    if xlabel:
        out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" font-size="12" '
                   f'text-anchor="middle" font-family="monospace">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {HEIGHT / 2})" '
                   f'font-family="monospace">{ylabel}</text>')
    for i, text in enumerate(annotations):
        out.append(f'<text x="{MARGIN_L + 10}" y="{MARGIN_T + 18 + 14 * i}" '
                   f'font-size="12" font-family="monospace">{text}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
