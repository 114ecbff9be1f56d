"""Minimal SVG chart emission.

Charts are written by direct path/text generation so the package has
no plotting dependency. Output is deterministic for fixed input: no
timestamps, no random identifiers. Every chart gets a CSV twin
elsewhere; these files are for quick visual inspection only.
"""

from __future__ import annotations

import math
from typing import Sequence

_PALETTE = ("#1f6fb2", "#d1495b", "#3f8f5f", "#8e6bb2", "#c98a2b", "#3aa0a8",
            "#7a6652", "#5b6675")

_W, _H = 760, 460
_ML, _MR, _MT, _MB = 72, 24, 46, 56


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0, 1.0]
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks or [lo, hi]


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.1e}"
    s = f"{v:.6g}"
    return s


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Frame:
    """Maps data coordinates onto the plot rectangle."""

    def __init__(self, xlo, xhi, ylo, yhi, logx=False):
        self.logx = logx
        if logx:
            xlo, xhi = math.log10(xlo), math.log10(xhi)
        if xhi <= xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if yhi <= ylo:
            pad = abs(ylo) * 0.1 or 1.0
            ylo, yhi = ylo - pad, yhi + pad
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v: float) -> float:
        if self.logx:
            v = math.log10(v)
        return _ML + (v - self.xlo) / (self.xhi - self.xlo) * (_W - _ML - _MR)

    def y(self, v: float) -> float:
        return _H - _MB - (v - self.ylo) / (self.yhi - self.ylo) * (_H - _MT - _MB)


def _chrome(frame: _Frame, title: str, xlabel: str, ylabel: str,
            xticks: Sequence[float], yticks: Sequence[float],
            xtick_labels: Sequence[str] | None = None) -> list[str]:
    e = []
    e.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
             f'height="{_H - _MT - _MB}" fill="none" stroke="#444" stroke-width="1"/>')
    e.append(f'<text x="{_W / 2:.0f}" y="24" text-anchor="middle" '
             f'font-size="15" font-weight="bold">{_esc(title)}</text>')
    e.append(f'<text x="{_W / 2:.0f}" y="{_H - 14}" text-anchor="middle" '
             f'font-size="12">{_esc(xlabel)}</text>')
    e.append(f'<text x="18" y="{_H / 2:.0f}" text-anchor="middle" font-size="12" '
             f'transform="rotate(-90 18 {_H / 2:.0f})">{_esc(ylabel)}</text>')
    labels = xtick_labels or [_fmt_tick(t) for t in xticks]
    for t, lbl in zip(xticks, labels):
        # log-x frames receive ticks as exponents, already in frame units
        if frame.logx:
            px = _ML + (t - frame.xlo) / (frame.xhi - frame.xlo) * (_W - _ML - _MR)
        else:
            px = frame.x(t)
        e.append(f'<line x1="{px:.2f}" y1="{_H - _MB}" x2="{px:.2f}" '
                 f'y2="{_H - _MB + 5}" stroke="#444"/>')
        e.append(f'<line x1="{px:.2f}" y1="{_MT}" x2="{px:.2f}" y2="{_H - _MB}" '
                 f'stroke="#ddd" stroke-width="0.6"/>')
        e.append(f'<text x="{px:.2f}" y="{_H - _MB + 18}" text-anchor="middle" '
                 f'font-size="11">{_esc(lbl)}</text>')
    for t in yticks:
        py = frame.y(t)
        e.append(f'<line x1="{_ML - 5}" y1="{py:.2f}" x2="{_ML}" y2="{py:.2f}" stroke="#444"/>')
        e.append(f'<line x1="{_ML}" y1="{py:.2f}" x2="{_W - _MR}" y2="{py:.2f}" '
                 f'stroke="#ddd" stroke-width="0.6"/>')
        e.append(f'<text x="{_ML - 8}" y="{py + 4:.2f}" text-anchor="end" '
                 f'font-size="11">{_fmt_tick(t)}</text>')
    return e


def _legend(labels: Sequence[str]) -> list[str]:
    e = []
    x0 = _ML + 10
    y0 = _MT + 14
    for i, lbl in enumerate(labels):
        c = _PALETTE[i % len(_PALETTE)]
        y = y0 + i * 16
        e.append(f'<line x1="{x0}" y1="{y - 4}" x2="{x0 + 22}" y2="{y - 4}" '
                 f'stroke="{c}" stroke-width="2"/>')
        e.append(f'<text x="{x0 + 28}" y="{y}" font-size="11">{_esc(lbl)}</text>')
    return e


def _document(body: list[str], meta: str | None) -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif">']
    if meta:
        head.append(f"<!-- {_esc(meta)} -->")
    head.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def line_chart(x: Sequence[float], series: Sequence[tuple[str, Sequence[float]]],
               title: str, xlabel: str, ylabel: str, meta: str | None = None) -> str:
    """Poly-line chart of several named series over a shared x axis."""
    xs = [float(v) for v in x]
    ys_all = [float(v) for _, ys in series for v in ys if math.isfinite(v)]
    if not xs or not ys_all:
        return _document(['<text x="300" y="200" font-size="13">no data</text>'], meta)
    frame = _Frame(min(xs), max(xs), min(ys_all), max(ys_all))
    body = _chrome(frame, title, xlabel, ylabel,
                   _nice_ticks(frame.xlo, frame.xhi), _nice_ticks(frame.ylo, frame.yhi))
    for i, (label, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{frame.x(px):.2f},{frame.y(float(py)):.2f}"
                       for px, py in zip(xs, ys) if math.isfinite(float(py)))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="1.6"/>')
    body.extend(_legend([label for label, _ in series]))
    return _document(body, meta)


def scatter_chart(sets: Sequence[tuple[str, Sequence[float], Sequence[float]]],
                  title: str, xlabel: str, ylabel: str, logx: bool = False,
                  meta: str | None = None) -> str:
    """Scatter of point sets; optional log10 x axis (e.g. MAC counts)."""
    pts = [(float(px), float(py)) for _, xs, ys in sets for px, py in zip(xs, ys)
           if math.isfinite(float(px)) and math.isfinite(float(py))]
    if logx:
        pts = [p for p in pts if p[0] > 0]
    if not pts:
        return _document(['<text x="300" y="200" font-size="13">no data</text>'], meta)
    xlo, xhi = min(p[0] for p in pts), max(p[0] for p in pts)
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    frame = _Frame(xlo, xhi, ylo, yhi, logx=logx)
    if logx:
        lo_d, hi_d = math.floor(frame.xlo), math.ceil(frame.xhi)
        xticks = list(range(int(lo_d), int(hi_d) + 1))
        xlabels = [f"1e{d}" for d in xticks]
    else:
        xticks = _nice_ticks(frame.xlo, frame.xhi)
        xlabels = None
    body = _chrome(frame, title, xlabel, ylabel, xticks,
                   _nice_ticks(frame.ylo, frame.yhi), xlabels)
    for i, (label, xs, ys) in enumerate(sets):
        color = _PALETTE[i % len(_PALETTE)]
        for px, py in zip(xs, ys):
            px, py = float(px), float(py)
            if not (math.isfinite(px) and math.isfinite(py)) or (logx and px <= 0):
                continue
            body.append(f'<circle cx="{frame.x(px):.2f}" cy="{frame.y(py):.2f}" '
                        f'r="3.2" fill="{color}" fill-opacity="0.75"/>')
    body.extend(_legend([label for label, _, _ in sets]))
    return _document(body, meta)
