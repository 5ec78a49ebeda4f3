"""Static SVG line charts, one plot per file, byte-deterministic output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .validation import ConfigError

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 62, 16, 34, 44
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, target=5):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return [float(t) for t in ticks]


def svg_line_plot(path, x, series, *, title="", xlabel="", ylabel="") -> None:
    """Write a line chart of the named series over x as a standalone SVG."""
    x = np.asarray(x, float)
    if x.ndim != 1 or x.size < 2:
        raise ConfigError("plot needs a 1-D x of length ≥ 2")
    data = {}
    for name, y in dict(series).items():
        y = np.asarray(y, float)
        if y.shape != x.shape:
            raise ConfigError(f"series {name!r} does not match x")
        data[name] = y
    if not data:
        raise ConfigError("plot needs at least one series")
    ylo = min(float(np.min(y)) for y in data.values())
    yhi = max(float(np.max(y)) for y in data.values())
    if yhi - ylo < 1e-12:
        pad = max(abs(yhi), 1.0) * 0.05
        ylo, yhi = ylo - pad, yhi + pad
    else:
        pad = 0.04 * (yhi - ylo)
        ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(x[0]), float(x[-1])
    if xhi <= xlo:
        raise ConfigError("x must be increasing")

    def X(v):
        return _ML + (_W - _ML - _MR) * (v - xlo) / (xhi - xlo)

    def Y(v):
        return _H - _MB - (_H - _MT - _MB) * (v - ylo) / (yhi - ylo)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{_W // 2}" y="22" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{title}</text>')
    for t in _ticks(xlo, xhi):
        px = X(t)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_H - _MB}" '
                     f'x2="{_fmt(px)}" y2="{_H - _MB + 4}" stroke="#333"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{_H - _MB + 17}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        py = Y(t)
        parts.append(f'<line x1="{_ML - 4}" y1="{_fmt(py)}" x2="{_ML}" '
                     f'y2="{_fmt(py)}" stroke="#333"/>')
        parts.append(f'<text x="{_ML - 7}" y="{_fmt(py + 3.5)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(t)}</text>')
    if xlabel:
        parts.append(f'<text x="{_W // 2}" y="{_H - 8}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{_H // 2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 16 {_H // 2})">{ylabel}</text>')
    for idx, (name, y) in enumerate(data.items()):
        color = _COLORS[idx % len(_COLORS)]
        pts = " ".join(f"{_fmt(X(xv))},{_fmt(Y(yv))}" for xv, yv in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.3"/>')
        ly = _MT + 16 + 15 * idx
        parts.append(f'<line x1="{_W - _MR - 120}" y1="{ly - 4}" '
                     f'x2="{_W - _MR - 100}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 95}" y="{ly}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
